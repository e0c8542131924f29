//! Reconstruction and parameter metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::renderer::render_frames;
use crate::scene::{SceneModel, INITIAL_STATE, ORIGIN, PIVOT, SCALE, TRACK_ANGLE};

/// Reported for identical images.
pub const PSNR_CAP: f64 = 120.0;

/// `10·log₁₀(1/MSE)` for images in `[0, 1]`; capped when the MSE is
/// below `1e-12`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!("psnr of images with {} and {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse < 1e-12 { PSNR_CAP } else { -10.0 * mse.log10() })
}

/// Intersection over union of masks binarized at 0.5; two empty masks
/// score 1.
pub fn iou(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("iou of masks with {} and {} values", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (*x >= 0.5, *y >= 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `‖H − I‖_F`.
pub fn homography_deviation(h: &Homography) -> f64 {
    h.deviation()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub estimate: f64,
    pub truth: f64,
    /// Relative error, or the absolute one when `relative` is false.
    pub error: f64,
    pub relative: bool,
}

impl ParamError {
    fn new(estimate: f64, truth: f64) -> Self {
        let diff = (estimate - truth).abs();
        if truth == 0.0 {
            Self {
                estimate,
                truth,
                error: diff,
                relative: false,
            }
        } else {
            Self {
                estimate,
                truth,
                error: diff / truth.abs(),
                relative: true,
            }
        }
    }

    /// Distance between points relative to a reference length.
    fn point(estimate: [f64; 2], truth: [f64; 2], reference: f64) -> Self {
        let d = (estimate[0] - truth[0]).hypot(estimate[1] - truth[1]);
        Self {
            estimate: d,
            truth: 0.0,
            error: d / reference,
            relative: true,
        }
    }
}

/// Errors of every fitted quantity with a known true value. Points
/// (pivot, origin) are compared by distance over the image diagonal
/// `diagonal`.
pub fn param_report(scene: &SceneModel, truth: &Truth, diagonal: f64) -> Result<BTreeMap<String, ParamError>> {
    if scene.family() != truth.family {
        return Err(Error::FamilyMismatch {
            expected: truth.family.to_string(),
            found: scene.family().to_string(),
        });
    }
    let mut out = BTreeMap::new();
    let est = scene.physical()?;
    for (name, &t) in &truth.physical {
        let e = est
            .get(name)
            .ok_or_else(|| Error::Data(format!("truth has `{name}`, which the model lacks")))?;
        out.insert(name.clone(), ParamError::new(*e, t));
    }
    let z = scene.vector(INITIAL_STATE)?;
    if z.len() != truth.initial_state.len() {
        return Err(Error::Data("initial state sizes differ".into()));
    }
    for (i, (e, t)) in z.iter().zip(&truth.initial_state).enumerate() {
        out.insert(format!("initial_state.{i}"), ParamError::new(*e, *t));
    }
    let point = |name: &str| -> Result<[f64; 2]> {
        let v = scene.vector(name)?;
        Ok([v[0], v[1]])
    };
    if let Some(p) = truth.pivot {
        out.insert("pivot".into(), ParamError::point(point(PIVOT)?, p, diagonal));
    }
    if let Some(p) = truth.origin {
        out.insert("origin".into(), ParamError::point(point(ORIGIN)?, p, diagonal));
    }
    if let Some(a) = truth.track_angle {
        out.insert("track_angle".into(), ParamError::new(scene.value(TRACK_ANGLE)?, a));
    }
    if let Some(s) = truth.scale {
        out.insert("scale".into(), ParamError::new(scene.value(SCALE)?, s));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: Vec<usize>,
    pub psnr: Vec<f64>,
    pub psnr_mean: Option<f64>,
    pub iou: Vec<f64>,
    pub iou_mean: Option<f64>,
    pub params: BTreeMap<String, ParamError>,
    pub homography_deviation: Option<f64>,
    /// Seconds spent fitting.
    pub wall_clock: f64,
    pub config_hash: String,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Render `frames` of the dataset and compare. PSNR is the mean of
/// per-frame values.
pub fn evaluate(
    scene: &SceneModel,
    dataset: &Dataset,
    frames: &[usize],
    wall_clock: f64,
    config_hash: &str,
) -> Result<MetricsReport> {
    if let Some(&bad) = frames.iter().find(|&&f| f >= dataset.frame_count()) {
        return Err(Error::Data(format!("frame {bad} is not in the dataset")));
    }
    let times: Vec<f64> = frames.iter().map(|&f| dataset.times[f]).collect();
    let rendered = render_frames(scene, &dataset.grid, &times)?;
    let mut psnrs = Vec::new();
    let mut ious = Vec::new();
    for (r, &f) in rendered.iter().zip(frames) {
        if let (Some(rgb), Some(gt)) = (&r.rgb, &dataset.frames) {
            psnrs.push(psnr(rgb, &gt[f])?);
        }
        if dataset.has_masks() {
            let gt: Vec<f64> = dataset
                .combined_mask(f)?
                .data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect();
            ious.push(iou(&r.opacity, &gt)?);
        }
    }
    let params = match &dataset.truth {
        Some(t) => {
            let [hx, hy] = dataset.grid.half_extent();
            param_report(scene, t, 2.0 * hx.hypot(hy))?
        }
        None => BTreeMap::new(),
    };
    Ok(MetricsReport {
        frames: frames.to_vec(),
        psnr_mean: mean(&psnrs),
        psnr: psnrs,
        iou_mean: mean(&ious),
        iou: ious,
        params,
        homography_deviation: scene.spec.homography.then(|| homography_deviation(&scene.homography())),
        wall_clock,
        config_hash: config_hash.to_string(),
    })
}
