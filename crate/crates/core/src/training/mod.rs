//! Optimization: Adam with per-group rates, exponential decay, pixel
//! batches and the online frame curriculum.

mod adam;
mod fit;

pub use adam::{Adam, AdamConfig};
pub use fit::{fit, EpochRecord, FitOutcome, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// `r₀ · β^(epoch / n_decay)` with a real-valued exponent.
pub fn lr_schedule(epoch: f64, r0: f64, beta: f64, n_decay: f64) -> f64 {
    r0 * beta.powf(epoch / n_decay)
}

/// Number of active frames: `min(total, n₀ + ⌊count / n_incr⌋)`.
pub fn frame_curriculum(count: usize, n_start: usize, n_incr: usize, total: usize) -> usize {
    (n_start + count / n_incr.max(1)).min(total)
}

/// What the curriculum counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumUnit {
    #[default]
    Steps,
    Epochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_mlp: f64,
    pub lr_physics: f64,
    /// Decay factor β per `decay_interval` epochs; 1 disables decay.
    pub decay: f64,
    pub decay_interval: f64,
    /// Whether the physics group decays too.
    pub decay_physics: bool,
    pub adam: AdamConfig,
    /// Pixels per optimizer step.
    pub batch_size: usize,
    pub frames_start: usize,
    pub frames_increment: usize,
    pub curriculum_unit: CurriculumUnit,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub loss: LossWeights,
    /// Outside-band points evaluated per step when that term is active.
    pub band_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_mlp: 9e-4,
            lr_physics: 1e-3,
            decay: 0.9,
            decay_interval: 25.0,
            decay_physics: false,
            adam: AdamConfig::default(),
            batch_size: 1 << 16,
            frames_start: 5,
            frames_increment: 10,
            curriculum_unit: CurriculumUnit::Steps,
            epochs: 1200,
            max_steps: None,
            seed: 0,
            loss: LossWeights::default(),
            band_samples: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay factor must lie in (0, 1]");
        }
        if !(self.decay_interval > 0.0) {
            return bad("decay interval must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.frames_start == 0 {
            return bad("the curriculum must start with at least one frame");
        }
        if !(self.lr_mlp >= 0.0 && self.lr_physics >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("invalid Adam hyperparameters");
        }
        self.loss.validate()
    }

    pub fn mlp_rate(&self, epoch: usize) -> f64 {
        lr_schedule(epoch as f64, self.lr_mlp, self.decay, self.decay_interval)
    }

    pub fn physics_rate(&self, epoch: usize) -> f64 {
        if self.decay_physics {
            lr_schedule(epoch as f64, self.lr_physics, self.decay, self.decay_interval)
        } else {
            self.lr_physics
        }
    }
}
