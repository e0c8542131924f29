//! Named parameter storage shared by the fields, physics and geometry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Optimizer group. Each group has its own learning rate and decay policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Appearance networks: background and object fields.
    Mlp,
    /// ODE parameters, initial state, transform extras and homography.
    Physics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Ordered map from parameter name to value. Iteration order is the name
/// order, which keeps optimizer updates and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) {
        self.params.insert(name.into(), Param { group, value });
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn group(&self, name: &str) -> Option<ParamGroup> {
        self.params.get(name).map(|p| p.group)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Put every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), tape.param(&p.value)))
            .collect();
        BoundParams { vars }
    }
}

/// Parameters placed on a tape, looked up by name.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradients by parameter name after `Tape::backward`.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(k, v)| v.grad().map(|g| (k.clone(), g)))
            .collect()
    }
}
