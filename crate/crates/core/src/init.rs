//! Mask-based starting values for the initial state and placement extras.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::dynamics::Family;
use crate::error::{Error, Result};
use crate::renderer::PixelGrid;
use crate::scene::{SceneModel, INITIAL_STATE, ORIGIN, PIVOT, REST_LENGTH, SCALE, TRACK_ANGLE};

/// Binary occupancy image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Data(format!(
                "mask has {} pixels, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Threshold gray values at 0.5.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        Self::new(width, height, values.iter().map(|&v| v >= 0.5).collect())
    }

    pub fn grid(&self) -> PixelGrid {
        PixelGrid {
            width: self.width,
            height: self.height,
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Normalized centers of the foreground pixels.
    pub fn foreground(&self) -> Vec<[f64; 2]> {
        let g = self.grid();
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| g.center(i))
            .collect()
    }
}

fn check_same_shape(masks: &[&BinaryMask]) -> Result<()> {
    let first = masks[0];
    if masks.iter().any(|m| m.width != first.width || m.height != first.height) {
        return Err(Error::Data("masks differ in size".into()));
    }
    Ok(())
}

fn nonempty(mask: &BinaryMask, what: &str) -> Result<()> {
    if mask.count() == 0 {
        return Err(Error::DegenerateMask(format!("{what}: mask is empty")));
    }
    Ok(())
}

/// Wrap an axis angle to `(−π/2, π/2]`.
pub fn wrap_axis(angle: f64) -> f64 {
    let r = angle.rem_euclid(PI);
    if r > FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// Pixel with the highest mean occupancy over all masks, in normalized
/// coordinates. Ties go to the first pixel in row-major order.
pub fn estimate_pivot(masks: &[&BinaryMask]) -> Result<[f64; 2]> {
    if masks.len() < 2 {
        return Err(Error::DegenerateMask("pivot estimation needs at least two masks".into()));
    }
    check_same_shape(masks)?;
    for m in masks {
        nonempty(m, "pivot")?;
    }
    let n = masks[0].data.len();
    let mut counts = vec![0usize; n];
    for m in masks {
        for (c, &b) in counts.iter_mut().zip(&m.data) {
            *c += b as usize;
        }
    }
    // the first maximum wins
    let best = counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
    Ok(masks[0].grid().center(best))
}

/// Angle between the first principal axis of the foreground pixels and the
/// downward vertical, positive when the lower end points to −x. The result
/// lies in `(−π/2, π/2]`.
pub fn estimate_angle_pca(mask: &BinaryMask) -> Result<f64> {
    let pts = mask.foreground();
    if pts.len() < 2 {
        return Err(Error::DegenerateMask(format!(
            "principal axis needs two foreground pixels, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx + syy <= 1e-15 {
        return Err(Error::DegenerateMask("foreground pixels are all identical".into()));
    }
    // major axis direction (cos θ, sin θ)
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (vx, vy) = (theta.cos(), theta.sin());
    Ok(wrap_axis((-vx).atan2(vy)))
}

/// Angular velocity between two masks, with the angle difference wrapped to
/// `(−π/2, π/2]`.
pub fn estimate_angular_velocity(m0: &BinaryMask, m1: &BinaryMask, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
    }
    let a0 = estimate_angle_pca(m0)?;
    let a1 = estimate_angle_pca(m1)?;
    Ok(wrap_axis(a1 - a0) / dt)
}

pub fn centroid(mask: &BinaryMask) -> Result<[f64; 2]> {
    nonempty(mask, "centroid")?;
    let pts = mask.foreground();
    let n = pts.len() as f64;
    Ok([
        pts.iter().map(|p| p[0]).sum::<f64>() / n,
        pts.iter().map(|p| p[1]).sum::<f64>() / n,
    ])
}

/// Centroid of every mask and the velocity between the first two.
pub fn estimate_position_velocity(masks: &[&BinaryMask], times: &[f64]) -> Result<(Vec<[f64; 2]>, [f64; 2])> {
    if masks.len() < 2 || times.len() != masks.len() {
        return Err(Error::DegenerateMask(format!(
            "need at least two masks with one time each (got {} masks, {} times)",
            masks.len(),
            times.len()
        )));
    }
    check_same_shape(masks)?;
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("mask times must increase, got {} then {}", times[0], times[1])));
    }
    let pos = masks.iter().map(|m| centroid(m)).collect::<Result<Vec<_>>>()?;
    let vel = [(pos[1][0] - pos[0][0]) / dt, (pos[1][1] - pos[0][1]) / dt];
    Ok((pos, vel))
}

/// Starting values derived from masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialEstimate {
    pub state: Vec<f64>,
    pub pivot: Option<[f64; 2]>,
    pub origin: Option<[f64; 2]>,
    pub track_angle: Option<f64>,
    pub rest_length: Option<f64>,
}

/// Estimate initial state and extras. `masks[k][f]` is object `k` in the
/// `f`-th frame given, with `times[f]`; the first two frames set
/// velocities. `scale` converts meters to normalized units for the block
/// and ball.
pub fn estimate(family: Family, masks: &[Vec<&BinaryMask>], times: &[f64], scale: f64) -> Result<InitialEstimate> {
    if masks.len() != family.object_count() {
        return Err(Error::Data(format!(
            "{family} needs masks for {} objects, got {}",
            family.object_count(),
            masks.len()
        )));
    }
    let first = &masks[0];
    if first.len() < 2 || first.len() != times.len() {
        return Err(Error::Data("initialization needs at least two timed mask frames".into()));
    }
    let dt = times[1] - times[0];
    let mut est = InitialEstimate {
        state: vec![],
        pivot: None,
        origin: None,
        track_angle: None,
        rest_length: None,
    };
    match family {
        Family::Pendulum => {
            est.pivot = Some(estimate_pivot(first)?);
            let phi = estimate_angle_pca(first[0])?;
            let omega = estimate_angular_velocity(first[0], first[1], dt)?;
            est.state = vec![phi, omega];
        }
        Family::Spring => {
            let (p1, v1) = estimate_position_velocity(&masks[0][..2], &times[..2])?;
            let (p2, v2) = estimate_position_velocity(&masks[1][..2], &times[..2])?;
            let (a, b) = (p1[0], p2[0]);
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            // the springs rest at separation 2l
            est.rest_length = Some(0.5 * d);
            est.state = vec![a[0], a[1], b[0], b[1], v1[0], v1[1], v2[0], v2[1]];
        }
        Family::Block => {
            let (p, v) = estimate_position_velocity(&first[..2], &times[..2])?;
            let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
            est.origin = Some(p[0]);
            est.track_angle = Some(if speed > 0.0 { v[1].atan2(v[0]) } else { 0.0 });
            est.state = vec![0.0, speed / scale];
        }
        Family::Ball => {
            let (p, v) = estimate_position_velocity(&first[..2], &times[..2])?;
            est.origin = Some(p[0]);
            est.state = vec![0.0, 0.0, v[0] / scale, v[1] / scale];
        }
    }
    Ok(est)
}

/// Write an estimate into the scene parameters.
pub fn apply(scene: &mut SceneModel, est: &InitialEstimate) -> Result<()> {
    scene.set_vector(INITIAL_STATE, &est.state)?;
    if let Some(p) = est.pivot {
        scene.set_vector(PIVOT, &p)?;
    }
    if let Some(o) = est.origin {
        scene.set_vector(ORIGIN, &o)?;
    }
    if let Some(a) = est.track_angle {
        scene.set_value(TRACK_ANGLE, a)?;
    }
    if let Some(l) = est.rest_length {
        scene.set_value(REST_LENGTH, l)?;
    }
    Ok(())
}

/// Scale used by [`estimate`] for the current scene.
pub fn scene_scale(scene: &SceneModel) -> f64 {
    scene.value(SCALE).unwrap_or(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rasterize a bar of given half-width (pixels) from `a` to `b` (pixel
    /// coordinates) by distance to the segment.
    fn bar(w: usize, h: usize, a: [f64; 2], b: [f64; 2], half_width: f64) -> BinaryMask {
        let mut data = vec![false; w * h];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        for r in 0..h {
            for c in 0..w {
                let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
                let t = (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (a[0] + t * dx - px, a[1] + t * dy - py);
                data[r * w + c] = qx * qx + qy * qy <= half_width * half_width;
            }
        }
        BinaryMask::new(w, h, data).unwrap()
    }

    /// Bar hanging from `pivot` at pendulum angle `phi`.
    fn hanging(phi: f64, pivot: [f64; 2], len: f64) -> BinaryMask {
        let end = [pivot[0] - len * phi.sin(), pivot[1] + len * phi.cos()];
        bar(64, 64, pivot, end, 1.5)
    }

    fn disk(w: usize, h: usize, c: [f64; 2], r: f64) -> BinaryMask {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64 + 0.5 - c[0], (i / w) as f64 + 0.5 - c[1]);
                x * x + y * y <= r * r
            })
            .collect();
        BinaryMask::new(w, h, data).unwrap()
    }

    #[test]
    fn wrap_axis_range() {
        assert_eq!(wrap_axis(FRAC_PI_2), FRAC_PI_2);
        assert!((wrap_axis(-FRAC_PI_2) - FRAC_PI_2).abs() < 1e-15);
        assert!((wrap_axis(PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap_axis(-0.3) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn pca_vertical_horizontal_and_tilted() {
        assert!(estimate_angle_pca(&bar(64, 64, [32.0, 10.0], [32.0, 50.0], 1.5)).unwrap().abs() < 1e-12);
        let h = estimate_angle_pca(&bar(64, 64, [10.0, 32.0], [50.0, 32.0], 1.5)).unwrap();
        assert!((h - FRAC_PI_2).abs() < 1e-12);
        let a = 30f64.to_radians();
        let got = estimate_angle_pca(&hanging(a, [32.0, 8.0], 45.0)).unwrap();
        assert!((got - a).abs() < 2f64.to_radians(), "{}", got.to_degrees());
        let got = estimate_angle_pca(&hanging(-a, [32.0, 8.0], 45.0)).unwrap();
        assert!((got + a).abs() < 2f64.to_radians());
    }

    #[test]
    fn pca_rejects_degenerate_masks() {
        let mut m = BinaryMask::new(8, 8, vec![false; 64]).unwrap();
        assert!(estimate_angle_pca(&m).is_err());
        m.data[10] = true;
        assert!(matches!(estimate_angle_pca(&m), Err(Error::DegenerateMask(_))));
    }

    #[test]
    fn angular_velocity_examples() {
        let m10 = hanging(10f64.to_radians(), [32.0, 8.0], 45.0);
        let m20 = hanging(20f64.to_radians(), [32.0, 8.0], 45.0);
        assert_eq!(estimate_angular_velocity(&m10, &m10, 0.1).unwrap(), 0.0);
        let w = estimate_angular_velocity(&m10, &m20, 0.1).unwrap();
        assert!((w - 1.745).abs() < 0.1745, "{w}");
        let p85 = bar(64, 64, [32.0, 32.0], [32.0 - 25.0 * 85f64.to_radians().sin(), 32.0 + 25.0 * 85f64.to_radians().cos()], 1.0);
        let m85 = bar(64, 64, [32.0, 32.0], [32.0 + 25.0 * 85f64.to_radians().sin(), 32.0 + 25.0 * 85f64.to_radians().cos()], 1.0);
        let w = estimate_angular_velocity(&p85, &m85, 0.1).unwrap();
        assert!(w.abs() < (20f64).to_radians() / 0.1, "{w}");
        assert!(estimate_angular_velocity(&m10, &m20, 0.0).is_err());
    }

    #[test]
    fn pivot_examples() {
        let a = hanging(0.3, [30.0, 10.0], 40.0);
        assert_eq!(estimate_pivot(&[&a, &a]).unwrap(), {
            let g = a.grid();
            let first = a.data.iter().position(|&b| b).unwrap();
            g.center(first)
        });
        let mut p = BinaryMask::new(4, 4, vec![false; 16]).unwrap();
        let mut q = p.clone();
        p.data[9] = true;
        q.data[2] = true;
        assert_eq!(estimate_pivot(&[&p, &q]).unwrap(), p.grid().center(2));
        assert!(estimate_pivot(&[&p]).is_err());

        let masks: Vec<BinaryMask> = (0..15)
            .map(|i| hanging(0.5 * (i as f64 * 0.4).cos(), [32.5, 12.5], 40.0))
            .collect();
        let refs: Vec<&BinaryMask> = masks.iter().collect();
        let est = estimate_pivot(&refs).unwrap();
        let truth = masks[0].grid().to_normalized(32.5, 12.5);
        let err = ((est[0] - truth[0]).powi(2) + (est[1] - truth[1]).powi(2)).sqrt();
        // relative to the image diagonal
        assert!(err / 8f64.sqrt() < 0.15, "{est:?} vs {truth:?}");
    }

    #[test]
    fn centroid_and_velocity_examples() {
        let d0 = disk(64, 64, [32.0, 32.0], 8.0);
        let (pos, vel) = estimate_position_velocity(&[&d0, &d0], &[0.0, 0.1]).unwrap();
        assert_eq!(vel, [0.0, 0.0]);
        let px = d0.grid().pixel_size();
        assert!(pos[0][0].abs() < 0.5 * px && pos[0][1].abs() < 0.5 * px);

        let d1 = disk(64, 64, [37.0, 32.0], 8.0);
        let (_, vel) = estimate_position_velocity(&[&d0, &d1], &[0.0, 0.1]).unwrap();
        let expect = 5.0 * px / 0.1;
        assert!((vel[0] - expect).abs() <= px / 0.1 && vel[1].abs() <= px / 0.1);

        let empty = BinaryMask::new(64, 64, vec![false; 4096]).unwrap();
        assert!(matches!(
            estimate_position_velocity(&[&d0, &empty], &[0.0, 0.1]),
            Err(Error::DegenerateMask(_))
        ));
    }

    #[test]
    fn estimators_are_translation_equivariant() {
        let a = hanging(0.4, [30.0, 10.0], 30.0);
        let b = hanging(0.2, [30.0, 10.0], 30.0);
        let shift = |m: &BinaryMask, dx: usize, dy: usize| {
            let mut data = vec![false; m.data.len()];
            for r in 0..m.height - dy {
                for c in 0..m.width - dx {
                    data[(r + dy) * m.width + c + dx] = m.data[r * m.width + c];
                }
            }
            BinaryMask::new(m.width, m.height, data).unwrap()
        };
        let (sa, sb) = (shift(&a, 3, 5), shift(&b, 3, 5));
        let px = a.grid().pixel_size();
        let (p, q) = (estimate_pivot(&[&a, &b]).unwrap(), estimate_pivot(&[&sa, &sb]).unwrap());
        assert!((q[0] - p[0] - 3.0 * px).abs() < 1e-12 && (q[1] - p[1] - 5.0 * px).abs() < 1e-12);
        let (ca, cs) = (centroid(&a).unwrap(), centroid(&sa).unwrap());
        assert!((cs[0] - ca[0] - 3.0 * px).abs() < 1e-12 && (cs[1] - ca[1] - 5.0 * px).abs() < 1e-12);
        assert!((estimate_angle_pca(&a).unwrap() - estimate_angle_pca(&sa).unwrap()).abs() < 1e-12);
        let w = estimate_angular_velocity(&a, &b, 0.1).unwrap();
        let ws = estimate_angular_velocity(&sa, &sb, 0.1).unwrap();
        assert!((w - ws).abs() < 1e-10);
    }

    #[test]
    fn estimate_per_family() {
        let d0 = disk(64, 64, [20.0, 32.0], 5.0);
        let d1 = disk(64, 64, [22.0, 32.0], 5.0);
        let e0 = disk(64, 64, [44.0, 32.0], 5.0);
        let e1 = disk(64, 64, [42.0, 32.0], 5.0);
        let est = estimate(Family::Spring, &[vec![&d0, &d1], vec![&e0, &e1]], &[0.0, 0.1], 1.0).unwrap();
        assert_eq!(est.state.len(), 8);
        assert!((est.rest_length.unwrap() - 0.5 * 24.0 / 32.0).abs() < 1e-9);
        assert!(est.state[4] > 0.0 && est.state[6] < 0.0);

        let est = estimate(Family::Ball, &[vec![&d0, &d1]], &[0.0, 0.1], 0.1).unwrap();
        assert!((est.state[2] - 2.0 / 32.0 / 0.1 / 0.1).abs() < 1e-9);
        let est = estimate(Family::Block, &[vec![&d0, &d1]], &[0.0, 0.1], 0.1).unwrap();
        assert!(est.track_angle.unwrap().abs() < 1e-12);
        assert!(estimate(Family::Spring, &[vec![&d0, &d1]], &[0.0, 0.1], 1.0).is_err());
    }
}
