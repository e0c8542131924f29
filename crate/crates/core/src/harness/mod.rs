//! Everything around the model: image and dataset files, run
//! configuration, checkpoints, metrics and the command line.

pub mod cli;
pub mod config;
pub mod io;
pub mod metrics;
pub mod netpbm;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{InitConfig, RunConfig};
pub use metrics::{evaluate, MetricsReport};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::init::{self, BinaryMask};
use crate::renderer::{render_frames, PixelGrid};
use crate::rng::seeded;
use crate::scene::{SceneModel, SceneSpec, INITIAL_STATE, SCALE};
use crate::training::{Adam, EpochRecord, Trainer};
use netpbm::Image;

/// Everything needed to resume, render or evaluate a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub config_hash: String,
    pub scene: SceneModel,
    pub adam: Adam,
    pub step: usize,
    pub epoch: usize,
    pub wall_clock: f64,
    /// Width and height of the fitted frames.
    #[serde(default)]
    pub image_size: Option<(usize, usize)>,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    /// Image size recorded at fit time.
    pub fn grid(&self) -> Result<PixelGrid> {
        let (w, h) = self
            .image_size
            .ok_or_else(|| Error::Config("checkpoint has no image size; pass --dataset".into()))?;
        PixelGrid::new(w, h)
    }
}

/// Scene for `dataset` with the configured sizes and starting values.
pub fn build_scene(config: &RunConfig, dataset: &Dataset) -> Result<SceneModel> {
    config.validate()?;
    dataset.validate()?;
    if config.family != dataset.family {
        return Err(Error::FamilyMismatch {
            expected: config.family.to_string(),
            found: dataset.family.to_string(),
        });
    }
    let spec = SceneSpec {
        family: config.family,
        background: config.background,
        object: config.object,
        homography: config.homography,
        substeps: config.substeps,
        t0: dataset.times[0],
        frame_interval: dataset.frame_interval(),
    };
    let mut scene = SceneModel::new(spec, &mut seeded(config.seed))?;
    for (name, &v) in &config.init.physical {
        scene.set_physical(name, v)?;
    }
    if let Some(s) = config.init.scale {
        scene.set_value(SCALE, s)?;
    }
    if config.init.from_masks {
        if !dataset.has_masks() {
            return Err(Error::Data(
                "initialization from masks needs masks for every frame (or set init.from_masks=false)".into(),
            ));
        }
        let frames = dataset.train_frames();
        let masks: Vec<Vec<&BinaryMask>> = dataset
            .masks
            .iter()
            .map(|obj| frames.iter().map(|&f| &obj[f]).collect())
            .collect();
        let times: Vec<f64> = frames.iter().map(|&f| dataset.times[f]).collect();
        let mut est = init::estimate(config.family, &masks, &times, init::scene_scale(&scene))?;
        // a configured rest length takes precedence over the estimate
        if config.init.physical.contains_key("rest_length") {
            est.rest_length = None;
        }
        init::apply(&mut scene, &est)?;
    }
    Ok(scene)
}

/// Train from scratch and evaluate on the test frames.
pub fn fit_run(config: &RunConfig, dataset: &Dataset) -> Result<(Checkpoint, MetricsReport)> {
    let scene = build_scene(config, dataset)?;
    let start = Instant::now();
    let mut trainer = Trainer::new(scene, config.train.clone(), dataset)?;
    trainer.run()?;
    let wall_clock = start.elapsed().as_secs_f64();
    let hash = config.hash();
    let ck = Checkpoint {
        config: config.clone(),
        config_hash: hash.clone(),
        scene: trainer.scene,
        adam: trainer.adam,
        step: trainer.step,
        epoch: trainer.epoch,
        wall_clock,
        image_size: Some((dataset.grid.width, dataset.grid.height)),
        history: trainer.history,
    };
    let report = evaluate(&ck.scene, dataset, &eval_frames(dataset), wall_clock, &hash)?;
    Ok((ck, report))
}

/// Test frames, or every frame when the split has none.
pub fn eval_frames(dataset: &Dataset) -> Vec<usize> {
    if dataset.test.is_empty() {
        (0..dataset.frame_count()).collect()
    } else {
        dataset.test.clone()
    }
}

/// Trajectory written next to rendered frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateLog {
    pub frames: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Render the given frame indices (times `t0 + kΔ`) into `out`:
/// `frames/NNNN.ppm`, `masks/NNNN.pgm` and `states.json`.
pub fn render_to_dir(scene: &SceneModel, grid: &PixelGrid, frames: &[usize], out: &Path) -> Result<StateLog> {
    let times: Vec<f64> = frames
        .iter()
        .map(|&k| scene.spec.t0 + k as f64 * scene.spec.frame_interval)
        .collect();
    let rendered = render_frames(scene, grid, &times)?;
    for (r, &k) in rendered.iter().zip(frames) {
        if let Some(rgb) = &r.rgb {
            Image::from_unit(grid.width, grid.height, 3, rgb)?.write(&out.join("frames").join(io::frame_name(k, "ppm")))?;
        }
        let mask: Vec<bool> = r.opacity.iter().map(|&o| o >= 0.5).collect();
        Image::from_mask(grid.width, grid.height, &mask).write(&out.join("masks").join(io::frame_name(k, "pgm")))?;
    }
    let log = StateLog {
        frames: frames.to_vec(),
        states: scene.state_values(&times)?,
        times,
    };
    io::write_json(&out.join("states.json"), &log)?;
    Ok(log)
}

/// Apply `name=value` edits: ODE parameters by short name
/// (`damping=0.7`) or initial state entries (`initial_state.1=0.5`).
pub fn edit_scene(scene: &SceneModel, edits: &[String]) -> Result<SceneModel> {
    let mut out = scene.clone();
    for e in edits {
        let (key, raw) = e
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("edit `{e}` is not name=value")))?;
        let value: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("edit `{e}`: `{raw}` is not a number")))?;
        if let Some(i) = key.strip_prefix("initial_state.") {
            let i: usize = i.parse().map_err(|_| Error::Config(format!("edit `{e}`: bad index")))?;
            let mut z = out.vector(INITIAL_STATE)?;
            if i >= z.len() {
                return Err(Error::Config(format!("edit `{e}`: the state has {} entries", z.len())));
            }
            z[i] = value;
            out.set_vector(INITIAL_STATE, &z)?;
        } else if out.physical()?.get(key) != Some(&value) {
            // an unchanged value keeps its stored form, so the scene stays bit-identical
            out.set_physical(key, value)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, prefix_split, presets};

    fn tiny() -> (RunConfig, Dataset) {
        let mut s = presets::pendulum(presets::PendulumSetup::default());
        s.width = 16;
        s.height = 16;
        s.frame_count = 6;
        (s.train, s.test) = prefix_split(4, 6);
        let ds = generate(&s, 0).unwrap();
        let cfg = RunConfig::preset("pendulum-synth")
            .unwrap()
            .with_overrides(&[
                "background.n_fourier=4".into(),
                "background.width=8".into(),
                "background.n_layers=2".into(),
                "object.n_fourier=4".into(),
                "object.width=8".into(),
                "object.n_layers=2".into(),
                "train.batch_size=128".into(),
                "train.epochs=1".into(),
            ])
            .unwrap();
        (cfg, ds)
    }

    #[test]
    fn scene_starts_from_config_and_masks() {
        let (cfg, ds) = tiny();
        let scene = build_scene(&cfg, &ds).unwrap();
        let p = scene.physical().unwrap();
        assert!((p["length"] - 1.9).abs() < 1e-12 && (p["damping"] - 0.6).abs() < 1e-12);
        assert!((scene.initial_state()[0] - 0.5).abs() < 0.2);
        let mut other = cfg.clone();
        other.family = crate::dynamics::Family::Ball;
        assert!(matches!(build_scene(&other, &ds), Err(Error::FamilyMismatch { .. })));
    }

    #[test]
    fn truth_scene_reports_zero_error() {
        let (cfg, ds) = tiny();
        let t = ds.truth.clone().unwrap();
        let mut scene = build_scene(&cfg, &ds).unwrap();
        for (k, v) in &t.physical {
            scene.set_physical(k, *v).unwrap();
        }
        scene.set_vector(INITIAL_STATE, &t.initial_state).unwrap();
        scene.set_vector(crate::scene::PIVOT, &t.pivot.unwrap()).unwrap();
        let rep = metrics::param_report(&scene, &t, 2.0 * 2f64.sqrt()).unwrap();
        assert!(rep.values().all(|e| e.error < 1e-12), "{rep:?}");
    }

    #[test]
    fn fit_evaluate_and_checkpoint_round_trip() {
        let (cfg, ds) = tiny();
        let (ck, report) = fit_run(&cfg, &ds).unwrap();
        assert_eq!(ck.epoch, 1);
        assert_eq!(report.frames, ds.test);
        assert_eq!(report.psnr.len(), 2);
        assert!(report.iou.iter().all(|v| (0.0..=1.0).contains(v)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let again = evaluate(&back.scene, &ds, &ds.test, back.wall_clock, &back.config_hash).unwrap();
        assert_eq!(again, report);
    }

    #[test]
    fn edits_change_only_the_named_values() {
        let (cfg, ds) = tiny();
        let scene = build_scene(&cfg, &ds).unwrap();
        let e = edit_scene(&scene, &["damping=1.2".into(), "initial_state.1=0.25".into()]).unwrap();
        assert!((e.physical().unwrap()["damping"] - 1.2).abs() < 1e-12);
        assert_eq!(e.initial_state()[1], 0.25);
        assert_eq!(e.physical().unwrap()["length"], scene.physical().unwrap()["length"]);
        assert!(matches!(edit_scene(&scene, &["stiffness=1".into()]), Err(Error::Config(_))));
        assert!(matches!(edit_scene(&scene, &["damping=x".into()]), Err(Error::Config(_))));
        assert_eq!(edit_scene(&scene, &[]).unwrap(), scene);
        let same = format!("damping={}", scene.physical().unwrap()["damping"]);
        assert_eq!(edit_scene(&scene, &[same]).unwrap(), scene);
    }
}
