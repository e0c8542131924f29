//! Global-to-local transforms: a learnable homography followed by the
//! family's rigid or translational placement of each object.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::Family;
use crate::error::{Error, Result};

/// Smallest allowed magnitude of the homogeneous coordinate.
pub const MIN_HOMOGENEOUS: f64 = 1e-8;

/// Plain 3x3 homography with `H₃₃ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    /// Row-major `h11 h12 h13 h21 h22 h23 h31 h32`.
    pub entries: [f64; 8],
}

impl Default for Homography {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        entries: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    };

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let entries: [f64; 8] = v
            .try_into()
            .map_err(|_| Error::Invalid(format!("homography needs 8 entries, got {}", v.len())))?;
        Ok(Self { entries })
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let e = &self.entries;
        [[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], 1.0]]
    }

    /// Normalizes a full matrix so that its bottom-right entry is 1.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let s = m[2][2];
        if s.abs() < MIN_HOMOGENEOUS {
            return Err(Error::Homography { denominator: s });
        }
        let mut entries = [0.0; 8];
        for (i, e) in entries.iter_mut().enumerate() {
            *e = m[i / 3][i % 3] / s;
        }
        Ok(Self { entries })
    }

    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let m = self.matrix();
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        if w.abs() <= MIN_HOMOGENEOUS {
            return Err(Error::Homography { denominator: w });
        }
        Ok([
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ])
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = self.matrix();
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
        if det.abs() < 1e-12 {
            return Err(Error::Homography { denominator: det });
        }
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        Self::from_matrix(adj.map(|row| row.map(|v| v / det)))
    }

    /// `‖H − I‖_F`.
    pub fn deviation(&self) -> f64 {
        let id = Self::IDENTITY.entries;
        self.entries
            .iter()
            .zip(id)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Apply an 8-entry homography (shape `[8]`) to an `n x 2` point matrix.
pub fn apply_homography<'t>(h: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    if h.numel() != 8 {
        return Err(Error::Invalid(format!("homography needs 8 entries, got {:?}", h.shape())));
    }
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::Invalid(format!("points must be n x 2, got {shape:?}")));
    }
    let tape = x.tape();
    let e: Vec<Var<'t>> = (0..8).map(|i| h.at(i)).collect::<std::result::Result<_, _>>()?;
    let one = tape.scalar(1.0);
    // row-vector form: [x y 1] · Hᵀ
    let ht = tape
        .stack(&[e[0], e[3], e[6], e[1], e[4], e[7], e[2], e[5], one])?
        .reshape(&[3, 3])?;
    let ones = tape.constant(Tensor::matrix(shape[0], 1, vec![1.0; shape[0]])?);
    let xh = Var::concat(&[x, ones], 1)?.matmul(ht)?;
    let w = xh.slice(1, 2, 3)?;
    if let Some(&bad) = w.values().iter().find(|v| !(v.abs() > MIN_HOMOGENEOUS)) {
        return Err(Error::Homography { denominator: bad });
    }
    Ok(xh.slice(1, 0, 2)?.scale_rows(one.div(w)?)?)
}

/// Per-family parameters of the placement beyond the ODE state, already
/// mapped to their constrained ranges.
#[derive(Clone, Copy, Debug)]
pub enum Extras<'t> {
    /// Pivot `A` (`[2]`).
    Pendulum { pivot: Var<'t> },
    Spring,
    /// Track origin `p₀` (`[2]`), track direction angle and pixel scale `s`.
    Block {
        origin: Var<'t>,
        track_angle: Var<'t>,
        scale: Var<'t>,
    },
    /// Origin `p₀` (`[2]`) and pixel scale `s`.
    Ball { origin: Var<'t>, scale: Var<'t> },
}

impl Extras<'_> {
    pub fn family(&self) -> Family {
        match self {
            Extras::Pendulum { .. } => Family::Pendulum,
            Extras::Spring => Family::Spring,
            Extras::Block { .. } => Family::Block,
            Extras::Ball { .. } => Family::Ball,
        }
    }
}

/// Affine map `x' = x·M + b` on row vectors; `M` absent means identity.
#[derive(Clone, Copy, Debug)]
pub struct Pose<'t> {
    pub linear: Option<Var<'t>>,
    pub offset: Var<'t>,
}

impl<'t> Pose<'t> {
    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        let y = match self.linear {
            Some(m) => x.matmul(m)?,
            None => x,
        };
        Ok(y.add_row(self.offset)?)
    }
}

/// `2 x 2` matrix `M` with `v·M = R(−θ) v` for row vectors `v`.
fn inverse_rotation<'t>(tape: &'t Tape, theta: Var<'t>) -> Result<Var<'t>> {
    let (c, s) = (theta.cos(), theta.sin());
    Ok(tape.stack(&[c, s.neg(), s, c])?.reshape(&[2, 2])?)
}

fn row2<'t>(tape: &'t Tape, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    Ok(tape.stack(&[a, b])?)
}

/// Placement of object `object` at the given ODE state.
///
/// * pendulum: `R(−φ)(x − A)`
/// * spring: `x − pᵢ`
/// * block: `R(−α_track)(x − p₀) − (s·x_block, 0)`
/// * ball: `x − s·(x, y) − p₀`
pub fn object_pose<'t>(state: &[Var<'t>], extras: &Extras<'t>, object: usize) -> Result<Pose<'t>> {
    let family = extras.family();
    if state.len() != family.state_dim() {
        return Err(Error::Invalid(format!(
            "{family} state has {} entries, expected {}",
            state.len(),
            family.state_dim()
        )));
    }
    if object >= family.object_count() {
        return Err(Error::Invalid(format!("{family} has no object {object}")));
    }
    let tape = state[0].tape();
    match *extras {
        Extras::Pendulum { pivot } => {
            let m = inverse_rotation(tape, state[0])?;
            let offset = pivot.reshape(&[1, 2])?.matmul(m)?.neg().reshape(&[2])?;
            Ok(Pose {
                linear: Some(m),
                offset,
            })
        }
        Extras::Spring => {
            let i = 2 * object;
            Ok(Pose {
                linear: None,
                offset: row2(tape, state[i].neg(), state[i + 1].neg())?,
            })
        }
        Extras::Block {
            origin,
            track_angle,
            scale,
        } => {
            let m = inverse_rotation(tape, track_angle)?;
            let rotated = origin.reshape(&[1, 2])?.matmul(m)?.reshape(&[2])?;
            let slide = row2(tape, scale.mul(state[0])?, tape.scalar(0.0))?;
            Ok(Pose {
                linear: Some(m),
                offset: rotated.add(slide)?.neg(),
            })
        }
        Extras::Ball { origin, scale } => {
            let pos = row2(tape, scale.mul(state[0])?, scale.mul(state[1])?)?;
            Ok(Pose {
                linear: None,
                offset: pos.add(origin)?.neg(),
            })
        }
    }
}

/// Full global-to-local map: optional homography, then the object pose.
pub fn object_transform<'t>(
    state: &[Var<'t>],
    extras: &Extras<'t>,
    homography: Option<Var<'t>>,
    object: usize,
    x_global: Var<'t>,
) -> Result<Var<'t>> {
    let x = match homography {
        Some(h) => apply_homography(h, x_global)?,
        None => x_global,
    };
    object_pose(state, extras, object)?.apply(x)
}
