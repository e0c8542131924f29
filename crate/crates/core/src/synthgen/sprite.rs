use serde::{Deserialize, Serialize};

use super::texture::{Texture, TextureSpec};
use crate::error::{Error, Result};
use crate::renderer::PixelGrid;

/// Filled ellipse in sprite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub angle: f64,
}

impl Lobe {
    fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.radii[0];
        let v = (-s * dx + c * dy) / self.radii[1];
        u * u + v * v <= 1.0
    }

    fn reach(&self) -> f64 {
        self.radii[0].max(self.radii[1])
    }
}

/// Sprite silhouettes in the object's local frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Rod from the origin along +y with a disk at its end.
    Pendulum {
        rod_length: f64,
        rod_width: f64,
        bob_radius: f64,
    },
    /// Union of ellipses.
    Blob { lobes: Vec<Lobe> },
    Rect { half_width: f64, half_height: f64 },
    Disk { radius: f64 },
}

impl Shape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Pendulum {
                rod_length,
                rod_width,
                bob_radius,
            } => {
                let rod = p[0].abs() <= 0.5 * rod_width && (0.0..=*rod_length).contains(&p[1]);
                let dy = p[1] - rod_length;
                rod || p[0] * p[0] + dy * dy <= bob_radius * bob_radius
            }
            Shape::Blob { lobes } => lobes.iter().any(|l| l.contains(p)),
            Shape::Rect {
                half_width,
                half_height,
            } => p[0].abs() <= *half_width && p[1].abs() <= *half_height,
            Shape::Disk { radius } => p[0] * p[0] + p[1] * p[1] <= radius * radius,
        }
    }

    /// Bounding box `[x0, y0, x1, y1]`.
    pub fn bounds(&self) -> [f64; 4] {
        match self {
            Shape::Pendulum {
                rod_length,
                rod_width,
                bob_radius,
            } => {
                let half = bob_radius.max(0.5 * rod_width);
                [-half, 0.0_f64.min(rod_length - bob_radius), half, rod_length + bob_radius]
            }
            Shape::Blob { lobes } => lobes.iter().fold(
                [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
                |b, l| {
                    let r = l.reach();
                    [
                        b[0].min(l.center[0] - r),
                        b[1].min(l.center[1] - r),
                        b[2].max(l.center[0] + r),
                        b[3].max(l.center[1] + r),
                    ]
                },
            ),
            Shape::Rect {
                half_width,
                half_height,
            } => [-half_width, -half_height, *half_width, *half_height],
            Shape::Disk { radius } => [-radius, -radius, *radius, *radius],
        }
    }

    /// Rejects shapes without area.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match self {
            Shape::Pendulum {
                rod_length,
                rod_width,
                bob_radius,
            } => *rod_length >= 0.0 && positive(*rod_width) && positive(*bob_radius),
            Shape::Blob { lobes } => !lobes.is_empty() && lobes.iter().all(|l| positive(l.radii[0]) && positive(l.radii[1])),
            Shape::Rect {
                half_width,
                half_height,
            } => positive(*half_width) && positive(*half_height),
            Shape::Disk { radius } => positive(*radius),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate sprite shape {self:?}")))
        }
    }
}

/// A textured silhouette.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    pub texture: TextureSpec,
    /// Texels along the longer side of the bounding box.
    pub texels: usize,
}

impl Sprite {
    pub fn build_texture(&self, seed: u64) -> Texture {
        let b = self.shape.bounds();
        let (w, h) = (b[2] - b[0], b[3] - b[1]);
        let n = self.texels.max(2) as f64;
        let (tw, th) = if w >= h {
            (n, (n * h / w).ceil().max(2.0))
        } else {
            ((n * w / h).ceil().max(2.0), n)
        };
        self.texture.build(tw as usize, th as usize, b, seed)
    }
}

/// Per-pixel output of [`rasterize_sprite`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpriteRaster {
    /// Sprite color at each pixel center (RGB triples).
    pub rgb: Vec<f64>,
    /// Fraction of sub-pixel samples inside the silhouette.
    pub coverage: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Sub-pixel sample offsets in pixel units, `s x s` per pixel.
fn subsample_offsets(s: usize) -> Vec<[f64; 2]> {
    let s = s.max(1);
    let step = 1.0 / s as f64;
    (0..s * s)
        .map(|i| [((i % s) as f64 + 0.5) * step - 0.5, ((i / s) as f64 + 0.5) * step - 0.5])
        .collect()
}

/// Sample a sprite through `transform`, which maps global points to the
/// sprite's local frame (the inverse of its placement). Colors are sampled
/// bilinearly at pixel centers; coverage comes from `supersample²` points
/// per pixel and the mask thresholds it at 0.5.
pub fn rasterize_sprite(
    texture: &Texture,
    silhouette: impl Fn([f64; 2]) -> bool,
    transform: impl Fn(&[[f64; 2]]) -> Result<Vec<[f64; 2]>>,
    grid: &PixelGrid,
    supersample: usize,
) -> Result<SpriteRaster> {
    let n = grid.len();
    let offsets = subsample_offsets(supersample);
    let px = grid.pixel_size();
    let mut points = grid.centers();
    points.reserve(n * offsets.len());
    for i in 0..n {
        let c = grid.center(i);
        points.extend(offsets.iter().map(|o| [c[0] + o[0] * px, c[1] + o[1] * px]));
    }
    let local = transform(&points)?;
    if local.len() != points.len() {
        return Err(Error::Invalid("sprite transform changed the point count".into()));
    }
    if local.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("sprite transform is not invertible on the image".into()));
    }
    let k = offsets.len();
    let mut rgb = Vec::with_capacity(3 * n);
    let mut coverage = Vec::with_capacity(n);
    for i in 0..n {
        rgb.extend_from_slice(&texture.sample(local[i]));
        let inside = local[n + i * k..n + (i + 1) * k].iter().filter(|p| silhouette(**p)).count();
        coverage.push(inside as f64 / k as f64);
    }
    let mask = coverage.iter().map(|&c| c >= 0.5).collect();
    Ok(SpriteRaster { rgb, coverage, mask })
}
