//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod properties;

use vidphys::autodiff::{Tape, Tensor};
use vidphys::dataset::Dataset;
use vidphys::harness::{build_scene, RunConfig};
use vidphys::losses::{band_points, total_loss, Batch, LossWeights, SegTargets, Target};
use vidphys::params::ParamGroup;
use vidphys::renderer::Query;
use vidphys::scene::SceneModel;
use vidphys::synthgen::{generate, prefix_split, presets, Scenario};

/// Scenario and run preset for each family, with the pendulum twice (color
/// and mask-only supervision).
pub fn family_cases() -> Vec<(&'static str, Scenario, &'static str)> {
    vec![
        ("pendulum", presets::pendulum(presets::PendulumSetup::default()), "pendulum-synth"),
        ("pendulum (masks)", presets::pendulum_mask(), "pendulum-mask"),
        ("spring", presets::spring(), "spring"),
        ("block", presets::block(), "block"),
        ("ball", presets::ball(), "ball"),
    ]
}

/// A `size x size`, two-frame version of `scenario` with small fields and
/// every loss term switched on.
pub fn toy_setup(scenario: Scenario, preset: &str, size: usize) -> (RunConfig, Dataset) {
    let mut s = scenario;
    s.width = size;
    s.height = size;
    s.frame_count = 2;
    (s.train, s.test) = prefix_split(2, 2);
    let ds = generate(&s, 3).unwrap();
    let mut overrides: Vec<String> = [
        "object.n_fourier=4",
        "object.width=8",
        "object.n_layers=2",
        "init.from_masks=false",
        "train.loss.reg=0.01",
        "train.loss.reg_start=0",
        "train.loss.attach=0.05",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let cfg = RunConfig::preset(preset).unwrap();
    if cfg.background.is_some() {
        for o in [
            "background.n_fourier=4",
            "background.width=8",
            "background.n_layers=2",
            "train.loss.seg=0.1",
            "train.loss.outside=1.0",
        ] {
            overrides.push(o.into());
        }
    }
    (cfg.with_overrides(&overrides).unwrap(), ds)
}

/// Every pixel of every frame, frame 0 first, plus a sparse set of band
/// points.
pub fn full_batch(scene: &SceneModel, ds: &Dataset, weights: &LossWeights) -> Batch {
    let points = ds.grid.centers();
    let n = points.len();
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let queries = ds
        .times
        .iter()
        .map(|&t| Query {
            time: t,
            points: Tensor::matrix(n, 2, flat.clone()).unwrap(),
        })
        .collect();
    let rows = n * ds.times.len();
    let target = match &ds.frames {
        Some(frames) if scene.background.is_some() => {
            Target::Rgb(Tensor::matrix(rows, 3, frames.iter().flatten().copied().collect()).unwrap())
        }
        _ => {
            let m: Vec<f64> = (0..ds.times.len())
                .flat_map(|f| ds.combined_mask(f).unwrap().data.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>())
                .collect();
            Target::Mask(Tensor::matrix(rows, 1, m).unwrap())
        }
    };
    let bg_features = scene.background.as_ref().map(|bg| {
        let f = bg.mapping.encode_points(&points).unwrap();
        let w = f.shape()[1];
        let data = (0..ds.times.len()).flat_map(|_| f.data().iter().copied()).collect();
        Tensor::matrix(rows, w, data).unwrap()
    });
    let seg = (weights.seg > 0.0).then(|| SegTargets {
        rows: n,
        masks: ds
            .coarse
            .as_ref()
            .unwrap()
            .iter()
            .map(|m| Tensor::matrix(n, 1, m.data.iter().map(|&b| b as u8 as f64).collect()).unwrap())
            .collect(),
    });
    let band = if weights.outside > 0.0 {
        let b: Vec<f64> = band_points(&ds.grid).iter().step_by(5).flatten().copied().collect();
        vec![Query {
            time: *ds.times.last().unwrap(),
            points: Tensor::matrix(b.len() / 2, 2, b).unwrap(),
        }]
    } else {
        Vec::new()
    };
    Batch {
        queries,
        target,
        bg_features,
        seg,
        band,
    }
}

fn loss(scene: &SceneModel, batch: &Batch, weights: &LossWeights) -> f64 {
    let tape = Tape::inference();
    let bound = scene.bind(&tape).unwrap();
    total_loss(scene, &bound, &tape, batch, 0, weights).unwrap().total.item()
}

/// Outcome of [`objective_gradient_error`].
pub struct GradReport {
    pub max_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Largest `|analytic - numeric| / max(1, |numeric|)` over every physics
/// parameter entry and three entries of every network parameter.
pub fn objective_gradient_error(cfg: &RunConfig, ds: &Dataset, step: f64) -> GradReport {
    let scene = build_scene(cfg, ds).unwrap();
    let weights = cfg.train.loss;
    let batch = full_batch(&scene, ds, &weights);

    let tape = Tape::new();
    let bound = scene.bind(&tape).unwrap();
    let terms = total_loss(&scene, &bound, &tape, &batch, 0, &weights).unwrap();
    tape.backward(terms.total).unwrap();
    let grads = bound.params.grads();

    let mut report = GradReport {
        max_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (name, param) in scene.params.iter() {
        let n = param.value.numel();
        let indices: Vec<usize> = match param.group {
            ParamGroup::Physics => (0..n).collect(),
            ParamGroup::Mlp => vec![0, n / 2, n - 1],
        };
        for i in indices {
            let probe = |delta: f64| {
                let mut s = scene.clone();
                s.params.get_mut(name).unwrap().data_mut()[i] += delta;
                loss(&s, &batch, &weights)
            };
            let numeric = (probe(step) - probe(-step)) / (2.0 * step);
            let analytic = grads.get(name).map_or(0.0, |g| g.data()[i]);
            let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_error {
                report.max_error = err;
                report.worst = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    report
}
