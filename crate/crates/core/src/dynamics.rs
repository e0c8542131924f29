//! Parametric ODE families and a fixed-step RK4 integrator whose every
//! arithmetic operation is recorded on the tape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Gravitational acceleration in m/s², pointing along +y (image rows grow
/// downward).
pub const GRAVITY: f64 = 9.81;

/// Spring endpoints closer than this have no defined direction.
pub const MIN_SEPARATION: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pendulum,
    Spring,
    Block,
    Ball,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Pendulum, Family::Spring, Family::Block, Family::Ball];

    /// Length of the state vector `z`.
    pub fn state_dim(self) -> usize {
        match self {
            Family::Pendulum | Family::Block => 2,
            Family::Spring => 8,
            Family::Ball => 4,
        }
    }

    /// Number of foreground objects the family renders.
    pub fn object_count(self) -> usize {
        match self {
            Family::Spring => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Pendulum => "pendulum",
            Family::Spring => "spring",
            Family::Block => "block",
            Family::Ball => "ball",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dynamics family `{s}`")))
    }
}

/// Physical parameters on the tape, already mapped to their constrained
/// ranges.
#[derive(Clone, Copy, Debug)]
pub enum OdeParams<'t> {
    /// Length `l` in meters and damping `c` in 1/s.
    Pendulum { length: Var<'t>, damping: Var<'t> },
    /// Stiffness `k` and rest length `l`; the springs rest at separation `2l`.
    Spring { stiffness: Var<'t>, rest_length: Var<'t> },
    /// Incline `α` in radians and friction coefficient `μ`.
    Block { incline: Var<'t>, friction: Var<'t> },
    Ball,
}

impl<'t> OdeParams<'t> {
    pub fn family(&self) -> Family {
        match self {
            OdeParams::Pendulum { .. } => Family::Pendulum,
            OdeParams::Spring { .. } => Family::Spring,
            OdeParams::Block { .. } => Family::Block,
            OdeParams::Ball => Family::Ball,
        }
    }

    pub fn rhs(&self, z: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        check_dim(self.family(), z)?;
        match *self {
            OdeParams::Pendulum { length, damping } => rhs_pendulum(z, length, damping),
            OdeParams::Spring { stiffness, rest_length } => rhs_spring(z, stiffness, rest_length),
            OdeParams::Block { incline, friction } => rhs_block(z, incline, friction),
            OdeParams::Ball => rhs_ball(z),
        }
    }
}

fn check_dim(family: Family, z: &[Var<'_>]) -> Result<()> {
    if z.len() != family.state_dim() {
        return Err(Error::Invalid(format!(
            "{family} state has {} entries, expected {}",
            z.len(),
            family.state_dim()
        )));
    }
    Ok(())
}

/// `(ω, −(g/l) sin φ − c ω)` for `z = (φ, ω)`.
pub fn rhs_pendulum<'t>(z: &[Var<'t>], length: Var<'t>, damping: Var<'t>) -> Result<Vec<Var<'t>>> {
    check_dim(Family::Pendulum, z)?;
    let l = length.item();
    if l.is_nan() || l <= 0.0 {
        return Err(Error::NonPositive {
            name: "pendulum length",
            value: l,
        });
    }
    let (phi, omega) = (z[0], z[1]);
    let g_over_l = length.tape().scalar(GRAVITY).div(length)?;
    let accel = g_over_l.mul(phi.sin())?.add(damping.mul(omega)?)?.neg();
    Ok(vec![omega, accel])
}

/// Hooke's law between two unit masses. `z = (p₁, p₂, v₁, v₂)` with 2-D
/// positions and velocities.
pub fn rhs_spring<'t>(z: &[Var<'t>], stiffness: Var<'t>, rest_length: Var<'t>) -> Result<Vec<Var<'t>>> {
    check_dim(Family::Spring, z)?;
    let dx = z[0].sub(z[2])?;
    let dy = z[1].sub(z[3])?;
    let sep = dx.square().add(dy.square())?;
    let r = sep.item().sqrt();
    if !(r >= MIN_SEPARATION) {
        return Err(Error::SpringCollapse {
            separation: r,
            min: MIN_SEPARATION,
        });
    }
    let r = sep.sqrt()?;
    // F₁ = −k (d − 2l d/‖d‖) = f d
    let f = rest_length.mul_scalar(2.0).div(r)?.one_minus().mul(stiffness)?.neg();
    let f1x = f.mul(dx)?;
    let f1y = f.mul(dy)?;
    Ok(vec![z[4], z[5], z[6], z[7], f1x, f1y, f1x.neg(), f1y.neg()])
}

/// `(v, g (sin α − μ cos α))`.
pub fn rhs_block<'t>(z: &[Var<'t>], incline: Var<'t>, friction: Var<'t>) -> Result<Vec<Var<'t>>> {
    check_dim(Family::Block, z)?;
    let accel = incline
        .sin()
        .sub(friction.mul(incline.cos())?)?
        .mul_scalar(GRAVITY);
    Ok(vec![z[1], accel])
}

/// Free fall: `(v_x, v_y, 0, g)`.
pub fn rhs_ball<'t>(z: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
    check_dim(Family::Ball, z)?;
    let tape = z[0].tape();
    Ok(vec![z[2], z[3], tape.scalar(0.0), tape.scalar(GRAVITY)])
}

/// States at a strictly increasing list of times, all on the tape.
#[derive(Clone, Debug)]
pub struct Trajectory<'t> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<Var<'t>>>,
}

impl<'t> Trajectory<'t> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State at a time that is one of the integration nodes.
    pub fn state_at(&self, t: f64) -> Result<&[Var<'t>]> {
        self.times
            .iter()
            .position(|&s| s == t)
            .map(|i| self.states[i].as_slice())
            .ok_or_else(|| Error::TimeOutOfRange {
                time: t,
                start: self.times[0],
                end: *self.times.last().expect("non-empty"),
            })
    }

    /// Plain values of every state.
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|s| s.iter().map(Var::item).collect())
            .collect()
    }
}

/// Classical RK4 from `times[0]` through every later entry of `times`, with
/// `substeps` uniform steps per interval. `states[0]` is `z0` itself.
pub fn integrate<'t, F>(rhs: F, z0: &[Var<'t>], times: &[f64], substeps: usize) -> Result<Trajectory<'t>>
where
    F: Fn(&[Var<'t>]) -> Result<Vec<Var<'t>>>,
{
    if times.is_empty() {
        return Err(Error::Invalid("integration needs at least one time".into()));
    }
    if substeps == 0 {
        return Err(Error::Invalid("substeps must be at least 1".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("integration times must be finite and strictly increasing".into()));
    }
    let mut states = Vec::with_capacity(times.len());
    states.push(z0.to_vec());
    let mut z = z0.to_vec();
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            z = rk4_step(&rhs, &z, h)?;
            if z.iter().any(|v| !v.item().is_finite()) {
                return Err(Error::NonFiniteState {
                    time: w[0] + (s + 1) as f64 * h,
                });
            }
        }
        states.push(z.clone());
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
    })
}

fn axpy<'t>(z: &[Var<'t>], h: f64, k: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
    z.iter()
        .zip(k)
        .map(|(zi, ki)| Ok(zi.add(ki.mul_scalar(h))?))
        .collect()
}

fn rk4_step<'t, F>(rhs: &F, z: &[Var<'t>], h: f64) -> Result<Vec<Var<'t>>>
where
    F: Fn(&[Var<'t>]) -> Result<Vec<Var<'t>>>,
{
    let k1 = rhs(z)?;
    let k2 = rhs(&axpy(z, 0.5 * h, &k1)?)?;
    let k3 = rhs(&axpy(z, 0.5 * h, &k2)?)?;
    let k4 = rhs(&axpy(z, h, &k3)?)?;
    if [&k1, &k2, &k3, &k4].iter().any(|k| k.len() != z.len()) {
        return Err(Error::Invalid("right-hand side changed the state dimension".into()));
    }
    (0..z.len())
        .map(|i| {
            let mid = k2[i].add(k3[i])?.mul_scalar(2.0);
            let sum = k1[i].add(mid)?.add(k4[i])?;
            Ok(z[i].add(sum.mul_scalar(h / 6.0))?)
        })
        .collect()
}
