use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    /// One update of every parameter that has a gradient, at the rate of its
    /// group. Nothing is modified if any gradient is non-finite.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        rate: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Invalid(format!(
                    "gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let group = params.group(name).expect("checked above");
            let lr = rate(group);
            let n = g.numel();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let p = params.get_mut(name)?.data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
