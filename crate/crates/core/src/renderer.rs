//! Per-pixel compositing of the background and object fields.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fields::ObjectSample;
use crate::geometry::object_transform;
use crate::scene::{BoundScene, SceneModel};

/// Regular pixel grid. Pixel centers map to normalized coordinates where
/// the longer side spans `[−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("empty pixel grid {width}x{height}")));
        }
        Ok(Self { width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalized units per pixel.
    pub fn pixel_size(&self) -> f64 {
        2.0 / self.width.max(self.height) as f64
    }

    /// Normalized coordinate of a (possibly fractional) pixel position,
    /// where integer positions are pixel corners.
    pub fn to_normalized(&self, col: f64, row: f64) -> [f64; 2] {
        let s = self.pixel_size();
        [
            (col - 0.5 * self.width as f64) * s,
            (row - 0.5 * self.height as f64) * s,
        ]
    }

    /// Inverse of [`to_normalized`](Self::to_normalized).
    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.pixel_size();
        [p[0] / s + 0.5 * self.width as f64, p[1] / s + 0.5 * self.height as f64]
    }

    /// Center of the pixel with row-major index `i`.
    pub fn center(&self, i: usize) -> [f64; 2] {
        self.to_normalized((i % self.width) as f64 + 0.5, (i / self.width) as f64 + 0.5)
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// `n x 2` matrix of the given pixel centers.
    pub fn points(&self, pixels: &[usize]) -> Tensor {
        let data = pixels.iter().flat_map(|&i| self.center(i)).collect();
        Tensor::matrix(pixels.len(), 2, data).expect("points")
    }

    /// Half extent of the visible area in normalized units `(x, y)`.
    pub fn half_extent(&self) -> [f64; 2] {
        let s = self.pixel_size();
        [0.5 * self.width as f64 * s, 0.5 * self.height as f64 * s]
    }
}

/// Points sampled at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub time: f64,
    /// `n x 2` normalized coordinates.
    pub points: Tensor,
}

/// Combined opacity (`n x 1`) and winning object per row.
pub fn layered_opacity<'t>(opacities: &[Var<'t>]) -> Result<(Var<'t>, Vec<usize>)> {
    let (first, rest) = opacities
        .split_first()
        .ok_or_else(|| Error::Invalid("layering needs at least one object".into()))?;
    let mut combined = *first;
    let mut winner = vec![0; first.numel()];
    for (k, o) in rest.iter().enumerate() {
        let (cur, new) = (combined.values(), o.values());
        for (w, (a, b)) in winner.iter_mut().zip(cur.iter().zip(new.iter())) {
            if b > a {
                *w = k + 1;
            }
        }
        // ties stay with the lower index
        combined = combined.maximum(*o)?;
    }
    Ok((combined, winner))
}

/// `(1 − o)·c_bg + o·c_obj` with `o` an `n x 1` column.
pub fn blend<'t>(background: Var<'t>, object: Var<'t>, opacity: Var<'t>) -> Result<Var<'t>> {
    let bg = background.scale_rows(opacity.one_minus())?;
    Ok(bg.add(object.scale_rows(opacity)?)?)
}

/// Everything the forward pass produced for a set of queries, with rows in
/// query order.
pub struct Composite<'t> {
    /// `n x 3`, present when the scene has a background.
    pub color: Option<Var<'t>>,
    /// Combined opacity, `n x 1`.
    pub opacity: Var<'t>,
    pub objects: Vec<ObjectSample<'t>>,
    /// Local coordinates per object, `n x 2`.
    pub locals: Vec<Var<'t>>,
    pub winner: Vec<usize>,
}

fn stack_points(queries: &[Query]) -> Result<Tensor> {
    let n: usize = queries.iter().map(|q| q.points.shape()[0]).sum();
    let data = queries.iter().flat_map(|q| q.points.data().iter().copied()).collect();
    Ok(Tensor::matrix(n, 2, data)?)
}

/// Object colors, opacities and local coordinates at each query.
pub fn render_objects<'t>(
    scene: &SceneModel,
    bound: &BoundScene<'t>,
    tape: &'t Tape,
    queries: &[Query],
) -> Result<(Vec<ObjectSample<'t>>, Vec<Var<'t>>)> {
    if queries.is_empty() {
        return Err(Error::Invalid("nothing to render".into()));
    }
    for q in queries {
        let s = q.points.shape();
        if s.len() != 2 || s[1] != 2 {
            return Err(Error::Invalid(format!("query points must be n x 2, got {s:?}")));
        }
    }
    let times: Vec<f64> = queries.iter().map(|q| q.time).collect();
    let states = scene.states_at(bound, &times)?;
    let mut samples = Vec::with_capacity(scene.objects.len());
    let mut locals = Vec::with_capacity(scene.objects.len());
    for (i, field) in scene.objects.iter().enumerate() {
        let parts = queries
            .iter()
            .zip(&states)
            .map(|(q, z)| {
                let x = tape.constant(q.points.clone());
                object_transform(z, &bound.extras, bound.homography, i, x)
            })
            .collect::<Result<Vec<_>>>()?;
        let local = if parts.len() == 1 { parts[0] } else { Var::concat(&parts, 0)? };
        samples.push(field.eval(&bound.params, local)?);
        locals.push(local);
    }
    Ok((samples, locals))
}

/// Composite colors at each query. `bg_features` optionally supplies the
/// precomputed Fourier encoding of all query points, in row order.
pub fn render_queries<'t>(
    scene: &SceneModel,
    bound: &BoundScene<'t>,
    tape: &'t Tape,
    queries: &[Query],
    bg_features: Option<Tensor>,
) -> Result<Composite<'t>> {
    let (objects, locals) = render_objects(scene, bound, tape, queries)?;
    let opacities: Vec<Var<'t>> = objects.iter().map(|s| s.opacity).collect();
    let (opacity, winner) = layered_opacity(&opacities)?;
    let color = match &scene.background {
        None => None,
        Some(bg) => {
            let c_bg = match bg_features {
                Some(f) => bg.eval_features(&bound.params, tape.constant(f))?,
                None => bg.eval(&bound.params, tape.constant(stack_points(queries)?))?,
            };
            let mut c_obj = objects[0].rgb;
            for (k, s) in objects.iter().enumerate().skip(1) {
                let cond: Vec<bool> = winner.iter().flat_map(|&w| [w != k; 3]).collect();
                c_obj = c_obj.select(Rc::new(cond), s.rgb)?;
            }
            Some(blend(c_bg, c_obj, opacity)?)
        }
    };
    Ok(Composite {
        color,
        opacity,
        objects,
        locals,
        winner,
    })
}

/// A rendered image with per-object occupancy, all values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples; absent for mask-only scenes.
    pub rgb: Option<Vec<f64>>,
    pub opacity: Vec<f64>,
    pub object_opacity: Vec<Vec<f64>>,
}

const CHUNK: usize = 8192;

/// Render full frames without recording gradients.
pub fn render_frames(scene: &SceneModel, grid: &PixelGrid, times: &[f64]) -> Result<Vec<RenderedFrame>> {
    let features = match &scene.background {
        Some(bg) => Some(bg.mapping.encode_points(&grid.centers())?),
        None => None,
    };
    times
        .iter()
        .map(|&t| render_frame_with(scene, grid, t, features.as_ref()))
        .collect()
}

pub fn render_frame(scene: &SceneModel, grid: &PixelGrid, t: f64) -> Result<RenderedFrame> {
    Ok(render_frames(scene, grid, &[t])?.remove(0))
}

fn render_frame_with(scene: &SceneModel, grid: &PixelGrid, t: f64, features: Option<&Tensor>) -> Result<RenderedFrame> {
    let n = grid.len();
    let n_obj = scene.objects.len();
    let mut rgb = scene.background.as_ref().map(|_| Vec::with_capacity(3 * n));
    let mut opacity = Vec::with_capacity(n);
    let mut object_opacity = vec![Vec::with_capacity(n); n_obj];
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(CHUNK) {
        let tape = Tape::inference();
        let bound = scene.bind(&tape)?;
        let query = Query {
            time: t,
            points: grid.points(chunk),
        };
        let feats = features.map(|f| {
            let w = f.shape()[1];
            let data = f.data()[chunk[0] * w..(chunk[chunk.len() - 1] + 1) * w].to_vec();
            Tensor::matrix(chunk.len(), w, data).expect("feature rows")
        });
        let out = render_queries(scene, &bound, &tape, std::slice::from_ref(&query), feats)?;
        if let (Some(buf), Some(c)) = (rgb.as_mut(), out.color) {
            buf.extend_from_slice(&c.values());
        }
        opacity.extend_from_slice(&out.opacity.values());
        for (dst, s) in object_opacity.iter_mut().zip(&out.objects) {
            dst.extend_from_slice(&s.opacity.values());
        }
    }
    Ok(RenderedFrame {
        width: grid.width,
        height: grid.height,
        rgb,
        opacity,
        object_opacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Family;
    use crate::fields::FieldSpec;
    use crate::rng::seeded;
    use crate::scene::{SceneSpec, INITIAL_STATE, LENGTH};

    fn scene(family: Family) -> SceneModel {
        let fs = FieldSpec {
            n_fourier: 8,
            sigma: 1.5,
            n_layers: 3,
            width: 16,
        };
        let spec = SceneSpec {
            family,
            background: Some(fs),
            object: fs,
            homography: true,
            substeps: 10,
            t0: 0.0,
            frame_interval: 0.1,
        };
        SceneModel::new(spec, &mut seeded(9)).unwrap()
    }

    #[test]
    fn grid_centers_inside_unit_square() {
        let g = PixelGrid::new(64, 48).unwrap();
        let c = g.centers();
        assert!(c.iter().all(|p| p[0].abs() < 1.0 && p[1].abs() < 1.0));
        assert!((c[0][0] + 1.0 - 1.0 / 64.0).abs() < 1e-15);
        assert!((c[63][0] - 1.0 + 1.0 / 64.0).abs() < 1e-15);
        assert!((c[0][1] + 0.75 - 1.0 / 64.0).abs() < 1e-15);
        let p = g.to_pixel(g.center(100));
        assert!((p[0] - 36.5).abs() < 1e-12 && (p[1] - 1.5).abs() < 1e-12);
        assert!(PixelGrid::new(0, 3).is_err());
    }

    #[test]
    fn layered_opacity_examples() {
        let tape = Tape::inference();
        let col = |v: f64| tape.column(vec![v]);
        let (o, w) = layered_opacity(&[col(0.2), col(0.9)]).unwrap();
        assert_eq!((o.item(), w[0]), (0.9, 1));
        let (o, w) = layered_opacity(&[col(0.7), col(0.7)]).unwrap();
        assert_eq!((o.item(), w[0]), (0.7, 0));
        let (o, w) = layered_opacity(&[col(0.4)]).unwrap();
        assert_eq!((o.item(), w[0]), (0.4, 0));
        assert!(layered_opacity(&[]).is_err());
    }

    #[test]
    fn layered_opacity_gradient_goes_to_winner() {
        let tape = Tape::new();
        let a = tape.param(&Tensor::matrix(2, 1, vec![0.2, 0.8]).unwrap());
        let b = tape.param(&Tensor::matrix(2, 1, vec![0.9, 0.8]).unwrap());
        let (o, _) = layered_opacity(&[a, b]).unwrap();
        tape.backward(o.sum()).unwrap();
        assert_eq!(a.grad().unwrap().data(), &[0.0, 1.0]);
        assert_eq!(b.grad().unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn blend_examples_and_convexity() {
        let tape = Tape::inference();
        let bg = tape.constant(Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.3, 0.6, 0.9, 0.25, 0.5, 0.125]).unwrap());
        let obj = tape.constant(Tensor::matrix(3, 3, vec![0.0, 1.0, 0.0, 0.7, 0.1, 0.2, 0.75, 0.5, 0.375]).unwrap());
        let o = tape.column(vec![0.5, 0.0, 1.0]);
        let c = blend(bg, obj, o).unwrap().values();
        assert_eq!(&c[0..3], &[0.5, 0.5, 0.0]);
        assert_eq!(&c[3..6], &[0.3, 0.6, 0.9]);
        assert_eq!(&c[6..9], &[0.75, 0.5, 0.375]);

        let mut rng = seeded(3);
        use rand::Rng;
        for _ in 0..100 {
            let b: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let f: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let a: f64 = rng.gen();
            let c = blend(
                tape.constant(Tensor::matrix(1, 3, b.clone()).unwrap()),
                tape.constant(Tensor::matrix(1, 3, f.clone()).unwrap()),
                tape.column(vec![a]),
            )
            .unwrap()
            .values();
            for k in 0..3 {
                assert!(c[k] >= b[k].min(f[k]) - 1e-15 && c[k] <= b[k].max(f[k]) + 1e-15);
            }
        }
    }

    #[test]
    fn zero_opacity_renders_background_exactly() {
        let mut s = scene(Family::Pendulum);
        // output bias of the opacity channel far negative, weights zero
        let w = s.objects[0].net.weight_name(2);
        let b = s.objects[0].net.bias_name(2);
        s.params.get_mut(&w).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
        s.params.get_mut(&b).unwrap().data_mut()[3] = -1e4;
        let g = PixelGrid::new(6, 5).unwrap();
        let f = render_frame(&s, &g, 0.2).unwrap();
        assert!(f.opacity.iter().all(|&o| o == 0.0));
        let bg = s.background.as_ref().unwrap();
        let tape = Tape::inference();
        let p = s.params.bind(&tape);
        let c = bg.eval(&p, tape.constant(g.points(&(0..g.len()).collect::<Vec<_>>()))).unwrap();
        assert_eq!(f.rgb.unwrap(), *c.values());
    }

    #[test]
    fn static_scene_frames_are_identical() {
        let s = scene(Family::Pendulum);
        let g = PixelGrid::new(5, 5).unwrap();
        let f = render_frames(&s, &g, &[0.0, 0.7]).unwrap();
        assert_eq!(f[0], f[1]);
        assert_eq!(render_frame(&s, &g, 0.7).unwrap(), f[1]);
        assert!(f[0].rgb.as_ref().unwrap().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn chunked_and_unchunked_rendering_agree() {
        let mut s = scene(Family::Spring);
        s.set_vector(INITIAL_STATE, &[-0.2, 0.1, 0.3, -0.1, 0.5, 0.0, -0.5, 0.2]).unwrap();
        let g = PixelGrid::new(100, 90).unwrap();
        let f = render_frame(&s, &g, 0.3).unwrap();
        let tape = Tape::inference();
        let bound = s.bind(&tape).unwrap();
        let q = Query {
            time: 0.3,
            points: g.points(&(0..g.len()).collect::<Vec<_>>()),
        };
        let c = render_queries(&s, &bound, &tape, &[q], None).unwrap();
        assert_eq!(f.rgb.unwrap(), *c.color.unwrap().values());
        assert_eq!(f.object_opacity[1], *c.objects[1].opacity.values());
    }

    #[test]
    fn pixel_color_gradient_wrt_length_matches_finite_difference() {
        let mut s = scene(Family::Pendulum);
        s.set_vector(INITIAL_STATE, &[0.6, 0.0]).unwrap();
        let g = PixelGrid::new(4, 4).unwrap();
        let pixels: Vec<usize> = (0..16).collect();
        let weights: Vec<f64> = (0..48).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let eval = |s: &SceneModel, tape: &Tape| -> f64 {
            let bound = s.bind(tape).unwrap();
            let q = Query {
                time: 0.5,
                points: g.points(&pixels),
            };
            let c = render_queries(s, &bound, tape, &[q], None).unwrap().color.unwrap();
            let w = tape.constant(Tensor::matrix(16, 3, weights.clone()).unwrap());
            c.mul(w).unwrap().sum().item()
        };
        let tape = Tape::new();
        let analytic = {
            let bound = s.bind(&tape).unwrap();
            let q = Query {
                time: 0.5,
                points: g.points(&pixels),
            };
            let c = render_queries(&s, &bound, &tape, &[q], None).unwrap().color.unwrap();
            let w = tape.constant(Tensor::matrix(16, 3, weights.clone()).unwrap());
            tape.backward(c.mul(w).unwrap().sum()).unwrap();
            bound.params.get(LENGTH).unwrap().grad().unwrap().item()
        };
        let raw = s.params.get(LENGTH).unwrap().item();
        let h = 1e-5;
        let mut plus = s.clone();
        plus.params.get_mut(LENGTH).unwrap().data_mut()[0] = raw + h;
        let mut minus = s.clone();
        minus.params.get_mut(LENGTH).unwrap().data_mut()[0] = raw - h;
        let fd = (eval(&plus, &Tape::inference()) - eval(&minus, &Tape::inference())) / (2.0 * h);
        assert!(
            (analytic - fd).abs() / fd.abs().max(1e-3) < 1e-4,
            "{analytic} vs {fd}"
        );
    }
}
