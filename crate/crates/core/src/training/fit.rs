use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{frame_curriculum, Adam, CurriculumUnit, TrainConfig};
use crate::autodiff::{Tape, Tensor};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{band_points, total_loss, Batch, SegTargets, Target};
use crate::params::ParamGroup;
use crate::renderer::Query;
use crate::rng::{permutation, seeded, SceneRng};
use crate::scene::SceneModel;

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub active_frames: usize,
    /// Mean total loss over the epoch's steps.
    pub loss: f64,
    pub data_loss: f64,
    pub lr_mlp: f64,
    pub lr_physics: f64,
    pub physical: BTreeMap<String, f64>,
    pub initial_state: Vec<f64>,
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub scene: SceneModel,
    pub adam: Adam,
    pub steps: usize,
    pub history: Vec<EpochRecord>,
}

/// Holds the mutable state of a training run, so that a failed run still
/// exposes its last good parameters.
pub struct Trainer<'d> {
    pub scene: SceneModel,
    pub adam: Adam,
    pub config: TrainConfig,
    pub step: usize,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    dataset: &'d Dataset,
    rng: SceneRng,
    /// Training frames in time order.
    frames: Vec<usize>,
    points: Vec<[f64; 2]>,
    bg_features: Option<Tensor>,
    masks: Option<Vec<Vec<f64>>>,
    coarse: Option<Vec<Vec<f64>>>,
    band: Vec<[f64; 2]>,
}

/// Separate stream from the one used to build the model.
const SAMPLING_STREAM: u64 = 0x5eed_ba7c;

impl<'d> Trainer<'d> {
    pub fn new(scene: SceneModel, config: TrainConfig, dataset: &'d Dataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        if scene.family() != dataset.family {
            return Err(Error::FamilyMismatch {
                expected: scene.family().to_string(),
                found: dataset.family.to_string(),
            });
        }
        let grid = dataset.grid;
        let points = grid.centers();
        let bg_features = match &scene.background {
            Some(bg) => {
                if dataset.frames.is_none() {
                    return Err(Error::Data("a color model needs RGB frames".into()));
                }
                Some(bg.mapping.encode_points(&points)?)
            }
            None => None,
        };
        let masks = if scene.background.is_none() {
            if !dataset.has_masks() {
                return Err(Error::Data("a mask-only model needs masks for every frame".into()));
            }
            let m = (0..dataset.frame_count())
                .map(|f| {
                    Ok(dataset
                        .combined_mask(f)?
                        .data
                        .iter()
                        .map(|&b| if b { 1.0 } else { 0.0 })
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?;
            Some(m)
        } else {
            None
        };
        let coarse = if config.loss.seg > 0.0 {
            let c = dataset
                .coarse
                .as_ref()
                .ok_or_else(|| Error::Data("this scene needs coarse first-frame masks".into()))?;
            if c.len() != scene.objects.len() {
                return Err(Error::Data(format!(
                    "{} coarse masks for {} objects",
                    c.len(),
                    scene.objects.len()
                )));
            }
            Some(
                c.iter()
                    .map(|m| m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
                    .collect(),
            )
        } else {
            None
        };
        let band = if config.loss.outside > 0.0 {
            band_points(&grid)
        } else {
            Vec::new()
        };
        let rng = seeded(config.seed ^ SAMPLING_STREAM);
        Ok(Self {
            scene,
            adam: Adam::new(config.adam),
            step: 0,
            epoch: 0,
            history: Vec::new(),
            frames: dataset.train_frames(),
            dataset,
            rng,
            points,
            bg_features,
            masks,
            coarse,
            band,
            config,
        })
    }

    pub fn active_frames(&self) -> usize {
        let count = match self.config.curriculum_unit {
            CurriculumUnit::Steps => self.step,
            CurriculumUnit::Epochs => self.epoch,
        };
        frame_curriculum(
            count,
            self.config.frames_start,
            self.config.frames_increment,
            self.frames.len(),
        )
    }

    fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    /// Train until the configured epoch count (or step limit).
    pub fn run(&mut self) -> Result<()> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// One pass over every pixel of the frames active at the epoch start.
    pub fn run_epoch(&mut self) -> Result<()> {
        let active = self.active_frames();
        let n_pix = self.dataset.grid.len();
        let order = permutation(&mut self.rng, active * n_pix);
        let (mut loss_sum, mut data_sum, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(self.config.batch_size) {
            if self.config.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            let rows: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&r| (self.frames[r / n_pix], r % n_pix))
                .collect();
            let (total, data) = self.train_step(&rows)?;
            loss_sum += total;
            data_sum += data;
            steps += 1;
        }
        let steps_f = steps.max(1) as f64;
        self.history.push(EpochRecord {
            epoch: self.epoch,
            steps,
            active_frames: active,
            loss: loss_sum / steps_f,
            data_loss: data_sum / steps_f,
            lr_mlp: self.config.mlp_rate(self.epoch),
            lr_physics: self.config.physics_rate(self.epoch),
            physical: self.scene.physical()?,
            initial_state: self.scene.initial_state(),
        });
        self.epoch += 1;
        Ok(())
    }

    /// Assemble the batch for `(frame, pixel)` rows, grouped by frame in time
    /// order.
    fn build_batch(&mut self, rows: &[(usize, usize)]) -> Result<Batch> {
        let ds = self.dataset;
        let mut rows = rows.to_vec();
        rows.sort_by(|a, b| ds.times[a.0].total_cmp(&ds.times[b.0]));
        let mut queries = Vec::new();
        let mut start = 0;
        while start < rows.len() {
            let f = rows[start].0;
            let end = start + rows[start..].iter().take_while(|r| r.0 == f).count();
            let pts: Vec<f64> = rows[start..end].iter().flat_map(|r| self.points[r.1]).collect();
            queries.push(Query {
                time: ds.times[f],
                points: Tensor::matrix(end - start, 2, pts)?,
            });
            start = end;
        }
        let n = rows.len();
        let target = match &self.masks {
            Some(m) => Target::Mask(Tensor::matrix(n, 1, rows.iter().map(|r| m[r.0][r.1]).collect())?),
            None => {
                let frames = ds.frames.as_ref().expect("checked in new");
                let data = rows
                    .iter()
                    .flat_map(|r| frames[r.0][3 * r.1..3 * r.1 + 3].iter().copied())
                    .collect();
                Target::Rgb(Tensor::matrix(n, 3, data)?)
            }
        };
        let bg_features = self.bg_features.as_ref().map(|f| {
            let w = f.shape()[1];
            let data = rows
                .iter()
                .flat_map(|r| f.data()[r.1 * w..(r.1 + 1) * w].iter().copied())
                .collect();
            Tensor::matrix(n, w, data).expect("feature rows")
        });
        // coarse masks belong to frame 0, which sorts first
        let seg = self.coarse.as_ref().map(|c| {
            let k = rows.iter().take_while(|r| r.0 == 0).count();
            SegTargets {
                rows: k,
                masks: c
                    .iter()
                    .map(|m| Tensor::matrix(k, 1, rows[..k].iter().map(|r| m[r.1]).collect()).expect("seg rows"))
                    .collect(),
            }
        });
        let band = if self.band.is_empty() {
            Vec::new()
        } else {
            let k = self.config.band_samples.min(self.band.len());
            let active = self.active_frames();
            let f = self.frames[self.rng.gen_range(0..active)];
            let pts: Vec<f64> = (0..k)
                .flat_map(|_| self.band[self.rng.gen_range(0..self.band.len())])
                .collect();
            vec![Query {
                time: ds.times[f],
                points: Tensor::matrix(k, 2, pts)?,
            }]
        };
        Ok(Batch {
            queries,
            target,
            bg_features,
            seg,
            band,
        })
    }

    /// Forward, backward and one Adam update. Returns (total, data) loss.
    pub fn train_step(&mut self, rows: &[(usize, usize)]) -> Result<(f64, f64)> {
        let batch = self.build_batch(rows)?;
        let tape = Tape::new();
        let bound = self.scene.bind(&tape)?;
        let terms = total_loss(&self.scene, &bound, &tape, &batch, self.epoch, &self.config.loss)?;
        let value = terms.total.item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                step: self.step,
                value,
            });
        }
        tape.backward(terms.total)?;
        let grads = bound.params.grads();
        let (r_mlp, r_phys) = (self.config.mlp_rate(self.epoch), self.config.physics_rate(self.epoch));
        self.adam.update(&mut self.scene.params, &grads, |g| match g {
            ParamGroup::Mlp => r_mlp,
            ParamGroup::Physics => r_phys,
        })?;
        self.step += 1;
        Ok((value, terms.data))
    }

    pub fn into_outcome(self) -> FitOutcome {
        FitOutcome {
            scene: self.scene,
            adam: self.adam,
            steps: self.step,
            history: self.history,
        }
    }
}

/// Train `scene` on the dataset's training frames.
pub fn fit(dataset: &Dataset, scene: SceneModel, config: &TrainConfig) -> Result<FitOutcome> {
    let mut trainer = Trainer::new(scene, config.clone(), dataset)?;
    trainer.run()?;
    Ok(trainer.into_outcome())
}
