//! Run configuration: one JSON document per run, with named presets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::io::read_json_with;
use crate::dynamics::Family;
use crate::error::{Error, Result};
use crate::fields::FieldSpec;
use crate::losses::LossWeights;
use crate::training::TrainConfig;

/// How the physical parameters start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Estimate the initial state and placement from the training masks.
    pub from_masks: bool,
    /// Starting values of ODE parameters by short name.
    pub physical: BTreeMap<String, f64>,
    /// Metres-to-image scale for the block and ball.
    pub scale: Option<f64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            from_masks: true,
            physical: BTreeMap::new(),
            scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// `None` fits masks only.
    pub background: Option<FieldSpec>,
    pub object: FieldSpec,
    #[serde(default)]
    pub homography: bool,
    /// RK4 steps per frame interval.
    pub substeps: usize,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn field(n_fourier: usize, sigma: f64, n_layers: usize, width: usize) -> FieldSpec {
    FieldSpec {
        n_fourier,
        sigma,
        n_layers,
        width,
    }
}

fn physical(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub const PRESETS: [&str; 6] = ["spring", "pendulum-mask", "pendulum-synth", "real-pendulum", "block", "ball"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let high_res = TrainConfig {
            lr_mlp: 9e-4,
            lr_physics: 1e-3,
            decay: 0.9,
            decay_interval: 25.0,
            frames_start: 5,
            frames_increment: 10,
            epochs: 1200,
            ..TrainConfig::default()
        };
        let real = |frames_start, frames_increment| TrainConfig {
            frames_start,
            frames_increment,
            loss: LossWeights {
                reg: 1e-3,
                reg_start: 100,
                ..LossWeights::default()
            },
            ..high_res.clone()
        };
        let base = |family, background, object, train, init: &[(&str, f64)]| Self {
            family,
            dataset: None,
            seed: 0,
            background,
            object,
            homography: false,
            substeps: 10,
            init: InitConfig {
                physical: physical(init),
                ..InitConfig::default()
            },
            train,
        };
        Ok(match name {
            "spring" => base(
                Family::Spring,
                Some(field(64, 5.0, 6, 64)),
                field(64, 2.2, 6, 64),
                TrainConfig {
                    lr_mlp: 1e-3,
                    lr_physics: 5e-3,
                    decay: 0.99954,
                    decay_interval: 50.0,
                    frames_start: 2,
                    frames_increment: 30,
                    epochs: 1200,
                    loss: LossWeights::spring(),
                    ..TrainConfig::default()
                },
                &[("stiffness", 1.5)],
            ),
            "pendulum-mask" => base(
                Family::Pendulum,
                None,
                field(64, 0.1, 6, 64),
                TrainConfig {
                    lr_mlp: 5e-3,
                    lr_physics: 1e-2,
                    decay: 1.0,
                    frames_start: 5,
                    frames_increment: 20,
                    epochs: 2000,
                    ..TrainConfig::default()
                },
                &[("damping", 0.25), ("length", 1.5)],
            ),
            "pendulum-synth" => base(
                Family::Pendulum,
                Some(field(256, 30.0, 8, 512)),
                field(256, 10.0, 8, 128),
                TrainConfig {
                    loss: LossWeights {
                        reg: 5e-4,
                        reg_start: 400,
                        ..LossWeights::default()
                    },
                    ..high_res.clone()
                },
                &[("damping", 0.6), ("length", 1.9)],
            ),
            "real-pendulum" => Self {
                homography: true,
                ..base(
                    Family::Pendulum,
                    Some(field(256, 50.0, 8, 512)),
                    field(128, 15.0, 8, 128),
                    real(5, 20),
                    &[("damping", 0.5), ("length", 0.4)],
                )
            },
            "block" => Self {
                homography: true,
                ..base(
                    Family::Block,
                    Some(field(256, 30.0, 8, 512)),
                    field(128, 15.0, 8, 128),
                    real(5, 10),
                    &[("friction", 0.01)],
                )
            },
            "ball" => Self {
                homography: true,
                ..base(
                    Family::Ball,
                    Some(field(256, 30.0, 8, 512)),
                    field(128, 5.0, 8, 128),
                    real(8, 10),
                    &[],
                )
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    /// A file path, or `preset:NAME`.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(name) = spec.strip_prefix("preset:") {
            return Self::preset(name);
        }
        let cfg: Self = read_json_with(Path::new(spec), Error::Config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        for f in self.background.iter().chain([&self.object]) {
            if f.n_layers == 0 || f.width == 0 || f.n_fourier == 0 || !(f.sigma > 0.0) {
                return Err(Error::Config(format!("invalid field size {f:?}")));
            }
        }
        self.train.validate()
    }

    /// Apply `key=value` overrides on dotted paths, e.g.
    /// `train.lr_mlp=0.01` or `init.physical.length=1.2`. Values parse as
    /// JSON where possible and as strings otherwise.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short stable hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just set")
            }
            _ => return Err(Error::Config(format!("`{key}`: `{part}` is inside a non-object"))),
        };
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}
