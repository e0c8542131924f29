//! The full learnable scene: appearance fields, physical parameters,
//! initial state, placement extras and homography.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{integrate, Family, OdeParams};
use crate::error::{Error, Result};
use crate::fields::{BackgroundField, FieldSpec, ObjectField};
use crate::geometry::{Extras, Homography};
use crate::params::{BoundParams, ParamGroup, ParamStore};

pub const LENGTH: &str = "ode.length";
pub const DAMPING: &str = "ode.damping";
pub const STIFFNESS: &str = "ode.stiffness";
pub const REST_LENGTH: &str = "ode.rest_length";
pub const INCLINE: &str = "ode.incline";
pub const FRICTION: &str = "ode.friction";
pub const INITIAL_STATE: &str = "state.initial";
pub const PIVOT: &str = "extras.pivot";
pub const ORIGIN: &str = "extras.origin";
pub const TRACK_ANGLE: &str = "extras.track_angle";
pub const SCALE: &str = "extras.scale";
pub const HOMOGRAPHY: &str = "geometry.homography";

/// Parameters stored through softplus so that they stay positive.
const POSITIVE: [&str; 6] = [LENGTH, DAMPING, STIFFNESS, REST_LENGTH, FRICTION, SCALE];

/// Inverse of `softplus(x) = ln(1 + eˣ)`.
pub fn inv_softplus(y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::NonPositive {
            name: "softplus target",
            value: y,
        });
    }
    Ok(if y > 30.0 { y + (-(-y).exp()).ln_1p() } else { y.exp_m1().ln() })
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Structure of a scene model: everything except the parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub family: Family,
    /// `None` for mask-only data, which has no background to explain.
    pub background: Option<FieldSpec>,
    pub object: FieldSpec,
    pub homography: bool,
    /// RK4 steps per frame interval.
    pub substeps: usize,
    /// Time of the first frame; the initial state lives here.
    pub t0: f64,
    pub frame_interval: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub spec: SceneSpec,
    pub background: Option<BackgroundField>,
    pub objects: Vec<ObjectField>,
    pub params: ParamStore,
}

impl SceneModel {
    pub fn new(spec: SceneSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if !(spec.frame_interval > 0.0) {
            return Err(Error::Config(format!("frame interval must be positive, got {}", spec.frame_interval)));
        }
        let mut params = ParamStore::new();
        let background = match &spec.background {
            Some(fs) => Some(BackgroundField::new(&mut params, "background", fs, rng)?),
            None => None,
        };
        let objects = (0..spec.family.object_count())
            .map(|i| ObjectField::new(&mut params, &format!("object{i}"), &spec.object, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut scene = Self {
            spec,
            background,
            objects,
            params,
        };
        scene.insert_physics_defaults()?;
        Ok(scene)
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    fn insert_physics_defaults(&mut self) -> Result<()> {
        let phys = |s: &mut Self, name: &str, t: Tensor| s.params.insert(name, ParamGroup::Physics, t);
        let family = self.family();
        let (state, physical): (Vec<f64>, Vec<(&str, f64)>) = match family {
            Family::Pendulum => (vec![0.0, 0.0], vec![(LENGTH, 1.9), (DAMPING, 0.6)]),
            Family::Spring => (
                vec![-0.3, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![(STIFFNESS, 1.5), (REST_LENGTH, 0.3)],
            ),
            Family::Block => (vec![0.0, 0.0], vec![(INCLINE, 0.3), (FRICTION, 0.1)]),
            Family::Ball => (vec![0.0; 4], vec![]),
        };
        phys(self, INITIAL_STATE, Tensor::vector(state));
        for (name, v) in physical {
            phys(self, name, Tensor::scalar(0.0));
            self.set_value(name, v)?;
        }
        match family {
            Family::Pendulum => phys(self, PIVOT, Tensor::vector(vec![0.0, 0.0])),
            Family::Spring => {}
            Family::Block => {
                phys(self, ORIGIN, Tensor::vector(vec![0.0, 0.0]));
                phys(self, TRACK_ANGLE, Tensor::scalar(0.0));
                phys(self, SCALE, Tensor::scalar(0.0));
                self.set_value(SCALE, 0.1)?;
            }
            Family::Ball => {
                phys(self, ORIGIN, Tensor::vector(vec![0.0, 0.0]));
                phys(self, SCALE, Tensor::scalar(0.0));
                self.set_value(SCALE, 0.1)?;
            }
        }
        if self.spec.homography {
            phys(self, HOMOGRAPHY, Tensor::vector(Homography::IDENTITY.entries.to_vec()));
        }
        Ok(())
    }

    /// Constrained value of a scalar parameter (softplus applied where the
    /// parameter must stay positive).
    pub fn value(&self, name: &str) -> Result<f64> {
        let raw = self.params.get(name)?;
        if raw.numel() != 1 {
            return Err(Error::Invalid(format!("`{name}` is not a scalar")));
        }
        let x = raw.data()[0];
        Ok(if POSITIVE.contains(&name) { softplus(x) } else { x })
    }

    pub fn set_value(&mut self, name: &str, value: f64) -> Result<()> {
        let raw = if POSITIVE.contains(&name) {
            inv_softplus(value)?
        } else {
            value
        };
        let t = self.params.get_mut(name)?;
        if t.numel() != 1 {
            return Err(Error::Invalid(format!("`{name}` is not a scalar")));
        }
        t.data_mut()[0] = raw;
        Ok(())
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.params.get(name)?.data().to_vec())
    }

    pub fn set_vector(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let t = self.params.get_mut(name)?;
        if t.numel() != values.len() {
            return Err(Error::Invalid(format!(
                "`{name}` has {} entries, got {}",
                t.numel(),
                values.len()
            )));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// Names of the ODE parameters of this family, in display order.
    pub fn ode_names(&self) -> &'static [&'static str] {
        match self.family() {
            Family::Pendulum => &[LENGTH, DAMPING],
            Family::Spring => &[STIFFNESS, REST_LENGTH],
            Family::Block => &[INCLINE, FRICTION],
            Family::Ball => &[],
        }
    }

    /// ODE parameters keyed by their short names (`length`, `damping`, ...).
    pub fn physical(&self) -> Result<BTreeMap<String, f64>> {
        self.ode_names()
            .iter()
            .map(|n| Ok((short_name(n).to_string(), self.value(n)?)))
            .collect()
    }

    /// Set an ODE parameter by short name.
    pub fn set_physical(&mut self, short: &str, value: f64) -> Result<()> {
        let name = self
            .ode_names()
            .iter()
            .find(|n| short_name(n) == short)
            .ok_or_else(|| Error::Config(format!("{} has no parameter `{short}`", self.family())))?;
        self.set_value(name, value)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.params.get(INITIAL_STATE).map(|t| t.data().to_vec()).unwrap_or_default()
    }

    pub fn homography(&self) -> Homography {
        self.params
            .get(HOMOGRAPHY)
            .ok()
            .and_then(|t| Homography::from_slice(t.data()).ok())
            .unwrap_or(Homography::IDENTITY)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<BoundScene<'t>> {
        let params = self.params.bind(tape);
        let positive = |name: &str| -> Result<Var<'t>> { Ok(params.get(name)?.softplus()) };
        let ode = match self.family() {
            Family::Pendulum => OdeParams::Pendulum {
                length: positive(LENGTH)?,
                damping: positive(DAMPING)?,
            },
            Family::Spring => OdeParams::Spring {
                stiffness: positive(STIFFNESS)?,
                rest_length: positive(REST_LENGTH)?,
            },
            Family::Block => OdeParams::Block {
                incline: params.get(INCLINE)?,
                friction: positive(FRICTION)?,
            },
            Family::Ball => OdeParams::Ball,
        };
        let extras = match self.family() {
            Family::Pendulum => Extras::Pendulum {
                pivot: params.get(PIVOT)?,
            },
            Family::Spring => Extras::Spring,
            Family::Block => Extras::Block {
                origin: params.get(ORIGIN)?,
                track_angle: params.get(TRACK_ANGLE)?,
                scale: positive(SCALE)?,
            },
            Family::Ball => Extras::Ball {
                origin: params.get(ORIGIN)?,
                scale: positive(SCALE)?,
            },
        };
        let z = params.get(INITIAL_STATE)?;
        let z0 = (0..z.numel()).map(|i| z.at(i)).collect::<std::result::Result<Vec<_>, _>>()?;
        let homography = if self.spec.homography {
            Some(params.get(HOMOGRAPHY)?)
        } else {
            None
        };
        Ok(BoundScene {
            params,
            ode,
            extras,
            z0,
            homography,
        })
    }

    /// Integration nodes covering `times`: the requested times plus the
    /// frame grid `t0 + kΔ`, so no RK4 interval is longer than one frame.
    pub fn integration_nodes(&self, times: &[f64]) -> Result<Vec<f64>> {
        let (t0, dt) = (self.spec.t0, self.spec.frame_interval);
        let tol = 1e-9 * dt;
        let mut req: Vec<f64> = times.to_vec();
        req.push(t0);
        if let Some(&bad) = req.iter().find(|t| !t.is_finite() || **t < t0 - tol) {
            return Err(Error::TimeOutOfRange {
                time: bad,
                start: t0,
                end: f64::INFINITY,
            });
        }
        req.sort_by(f64::total_cmp);
        req.dedup_by(|a, b| (*a - *b).abs() <= tol);
        let end = *req.last().expect("non-empty");
        let k_max = ((end - t0) / dt).floor() as usize;
        let mut nodes = req.clone();
        for k in 0..=k_max {
            let g = t0 + k as f64 * dt;
            if !req.iter().any(|r| (r - g).abs() <= tol) {
                nodes.push(g);
            }
        }
        nodes.sort_by(f64::total_cmp);
        if (nodes[0] - t0).abs() > tol {
            nodes.insert(0, t0);
        }
        // times that round to t0 collapse onto it
        nodes[0] = t0;
        Ok(nodes)
    }

    /// States at each requested time (any order, duplicates allowed).
    pub fn states_at<'t>(&self, bound: &BoundScene<'t>, times: &[f64]) -> Result<Vec<Vec<Var<'t>>>> {
        let nodes = self.integration_nodes(times)?;
        let ode = bound.ode;
        let traj = integrate(|z| ode.rhs(z), &bound.z0, &nodes, self.spec.substeps)?;
        let tol = 1e-9 * self.spec.frame_interval;
        times
            .iter()
            .map(|&t| {
                let i = nodes
                    .iter()
                    .position(|&n| (n - t).abs() <= tol)
                    .expect("requested time is a node");
                Ok(traj.states[i].clone())
            })
            .collect()
    }

    /// Plain state values at the requested times.
    pub fn state_values(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::inference();
        let bound = self.bind(&tape)?;
        Ok(self
            .states_at(&bound, times)?
            .iter()
            .map(|s| s.iter().map(Var::item).collect())
            .collect())
    }
}

/// `ode.length` → `length`.
pub fn short_name(name: &str) -> &str {
    name.rsplit('.').next().unwrap_or(name)
}

/// A scene whose parameters are on a tape.
pub struct BoundScene<'t> {
    pub params: BoundParams<'t>,
    pub ode: OdeParams<'t>,
    pub extras: Extras<'t>,
    pub z0: Vec<Var<'t>>,
    pub homography: Option<Var<'t>>,
}
