//! Training objectives and their epoch-dependent weighting.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::renderer::{render_objects, render_queries, PixelGrid, Query};
use crate::scene::{BoundScene, SceneModel};

/// Opacities are clamped to `[ε, 1 − ε]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// The outside band extends the visible area by this fraction of its size
/// on every side.
pub const BAND_FRACTION: f64 = 0.2;

fn check_rows(op: &str, pred: &Var<'_>, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Invalid(format!(
            "{op}: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean squared difference over every pixel and channel.
pub fn photometric_mse<'t>(pred: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    check_rows("photometric loss", &pred, target)?;
    let t = pred.tape().constant(target.clone());
    Ok(pred.sub(t)?.square().mean())
}

/// Mean of `o (1 − o)`; zero when every opacity is 0 or 1.
pub fn occupancy_regularizer<'t>(opacity: Var<'t>) -> Result<Var<'t>> {
    Ok(opacity.mul(opacity.one_minus())?.mean())
}

/// Binary cross entropy against a `{0, 1}` mask. Targets in `[0, 1]` are
/// thresholded at 0.5.
pub fn mask_bce<'t>(opacity: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    check_rows("mask loss", &opacity, target)?;
    if let Some(bad) = target.data().iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::Invalid(format!("mask value {bad} is outside [0, 1]")));
    }
    let m: Vec<f64> = target.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    let tape = opacity.tape();
    let m = tape.constant(Tensor::new(target.shape().to_vec(), m)?);
    let o = opacity.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let pos = m.mul(o.ln()?)?;
    let neg = m.one_minus().mul(o.one_minus().ln()?)?;
    Ok(pos.add(neg)?.mean().neg())
}

/// Opacity-weighted centroid of local coordinates (`[2]`); the point where
/// an object's field places its mass relative to its local origin.
pub fn attachment_offset<'t>(local: Var<'t>, opacity: Var<'t>) -> Result<Var<'t>> {
    let n = local.shape()[0];
    let ones = local.tape().constant(Tensor::matrix(1, n, vec![1.0; n])?);
    let weighted = ones.matmul(local.scale_rows(opacity)?)?.reshape(&[2])?;
    let mass = opacity.sum().add_scalar(1e-12);
    Ok(weighted.div(mass)?)
}

/// Samples per side of the local window used for the attachment term.
pub const ATTACH_GRID: usize = 16;

/// Cell-centered `ATTACH_GRID²` points covering `[-extent, extent]²` in an
/// object's local frame (`n x 2`).
pub fn attach_window(extent: f64) -> Result<Tensor> {
    let n = ATTACH_GRID;
    let step = 2.0 * extent / n as f64;
    let mut data = Vec::with_capacity(2 * n * n);
    for r in 0..n {
        for c in 0..n {
            data.push(-extent + (c as f64 + 0.5) * step);
            data.push(-extent + (r as f64 + 0.5) * step);
        }
    }
    Ok(Tensor::matrix(n * n, 2, data)?)
}

/// Pixel-spaced points in the band that extends the visible area by
/// [`BAND_FRACTION`] on each side, excluding the visible area itself.
pub fn band_points(grid: &PixelGrid) -> Vec<[f64; 2]> {
    let ext_w = (BAND_FRACTION * grid.width as f64).ceil() as i64;
    let ext_h = (BAND_FRACTION * grid.height as f64).ceil() as i64;
    let (w, h) = (grid.width as i64, grid.height as i64);
    let mut out = Vec::new();
    for row in -ext_h..h + ext_h {
        for col in -ext_w..w + ext_w {
            if (0..w).contains(&col) && (0..h).contains(&row) {
                continue;
            }
            out.push(grid.to_normalized(col as f64 + 0.5, row as f64 + 0.5));
        }
    }
    out
}

/// Weights of every loss term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub photo: f64,
    pub reg: f64,
    /// The regularizer is active from this epoch on.
    pub reg_start: usize,
    pub seg: f64,
    pub seg_decay: f64,
    pub seg_interval: usize,
    pub attach: f64,
    /// Half-width of the local window over which the attachment offset is
    /// measured.
    pub attach_extent: f64,
    pub outside: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            photo: 1.0,
            reg: 0.0,
            reg_start: 0,
            seg: 0.0,
            seg_decay: 0.2,
            seg_interval: 100,
            attach: 0.0,
            attach_extent: 0.5,
            outside: 0.0,
        }
    }
}

impl LossWeights {
    /// Spring scenes: coarse first-frame masks, attachment and outside terms.
    pub fn spring() -> Self {
        Self {
            seg: 0.01,
            attach: 0.05,
            outside: 1.0,
            ..Self::default()
        }
    }

    /// `λ_seg · decay^⌊epoch / interval⌋`.
    pub fn seg_weight(&self, epoch: usize) -> f64 {
        self.seg * self.seg_decay.powi((epoch / self.seg_interval.max(1)) as i32)
    }

    pub fn reg_weight(&self, epoch: usize) -> f64 {
        if epoch >= self.reg_start {
            self.reg
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.photo, self.reg, self.seg, self.seg_decay, self.attach, self.outside];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if !(self.attach_extent > 0.0) {
            return Err(Error::Config("the attachment window must have positive extent".into()));
        }
        if self.seg_decay > 1.0 {
            return Err(Error::Config("segmentation weight decay must not exceed 1".into()));
        }
        Ok(())
    }
}

/// Supervision for the sampled rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// `n x 3` colors.
    Rgb(Tensor),
    /// `n x 1` combined occupancy in `{0, 1}`.
    Mask(Tensor),
}

/// Coarse first-frame masks for the leading rows of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SegTargets {
    /// The first `rows` rows of the batch belong to the first frame.
    pub rows: usize,
    /// Per object, `rows x 1`.
    pub masks: Vec<Tensor>,
}

/// One optimizer step's worth of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub queries: Vec<Query>,
    pub target: Target,
    /// Precomputed background encoding of all rows.
    pub bg_features: Option<Tensor>,
    pub seg: Option<SegTargets>,
    /// Points outside the visible area where opacity should vanish.
    pub band: Vec<Query>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.queries.iter().map(|q| q.points.shape()[0]).sum()
    }
}

/// Individual terms (plain values) alongside the differentiable total.
pub struct LossTerms<'t> {
    pub total: Var<'t>,
    pub data: f64,
    pub reg: f64,
    pub seg: f64,
    pub attach: f64,
    pub outside: f64,
}

/// Weighted sum of every active term for `batch` at `epoch`.
pub fn total_loss<'t>(
    scene: &SceneModel,
    bound: &BoundScene<'t>,
    tape: &'t Tape,
    batch: &Batch,
    epoch: usize,
    weights: &LossWeights,
) -> Result<LossTerms<'t>> {
    let out = render_queries(scene, bound, tape, &batch.queries, batch.bg_features.clone())?;
    let data = match (&batch.target, out.color) {
        (Target::Rgb(t), Some(c)) => photometric_mse(c, t)?,
        (Target::Mask(m), _) => mask_bce(out.opacity, m)?,
        (Target::Rgb(_), None) => {
            return Err(Error::Config("color targets need a background field".into()));
        }
    };
    let mut total = data.mul_scalar(weights.photo);
    let mut terms = LossTerms {
        total,
        data: data.item(),
        reg: 0.0,
        seg: 0.0,
        attach: 0.0,
        outside: 0.0,
    };

    let w_reg = weights.reg_weight(epoch);
    if w_reg > 0.0 {
        let r = occupancy_regularizer(out.opacity)?;
        terms.reg = r.item();
        total = total.add(r.mul_scalar(w_reg))?;
    }

    let w_seg = weights.seg_weight(epoch);
    if let (true, Some(seg)) = (w_seg > 0.0, &batch.seg) {
        if seg.masks.len() != out.objects.len() {
            return Err(Error::Data(format!(
                "{} coarse masks for {} objects",
                seg.masks.len(),
                out.objects.len()
            )));
        }
        if seg.rows > 0 {
            let mut s = tape.scalar(0.0);
            for (obj, mask) in out.objects.iter().zip(&seg.masks) {
                s = s.add(mask_bce(obj.opacity.slice(0, 0, seg.rows)?, mask)?)?;
            }
            terms.seg = s.item();
            total = total.add(s.mul_scalar(w_seg))?;
        }
    }

    if weights.attach > 0.0 {
        // measured on a fixed local window rather than the batch pixels, so
        // diffuse opacity early in training does not drag objects around
        let window = tape.constant(attach_window(weights.attach_extent)?);
        let mut a = tape.scalar(0.0);
        for obj in &scene.objects {
            let o = obj.eval(&bound.params, window)?.opacity;
            a = a.add(attachment_offset(window, o)?.square().sum())?;
        }
        terms.attach = a.item();
        total = total.add(a.mul_scalar(weights.attach))?;
    }

    if weights.outside > 0.0 && !batch.band.is_empty() {
        let (objects, _) = render_objects(scene, bound, tape, &batch.band)?;
        let opacities: Vec<Var<'t>> = objects.iter().map(|s| s.opacity).collect();
        let o = crate::renderer::layered_opacity(&opacities)?.0;
        let b = o.square().mean();
        terms.outside = b.item();
        total = total.add(b.mul_scalar(weights.outside))?;
    }

    terms.total = total;
    Ok(terms)
}
