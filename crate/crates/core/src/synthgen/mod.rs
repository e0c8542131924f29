//! Synthetic scenes with known physics: simulate a family, place textured
//! sprites through the model's own geometry and composite them over a
//! procedural background.

mod sprite;
mod texture;

pub use sprite::{rasterize_sprite, Lobe, Shape, Sprite, SpriteRaster};
pub use texture::{Texture, TextureSpec};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dataset::{Dataset, Truth};
use crate::dynamics::{integrate, Family, OdeParams};
use crate::error::{Error, Result};
use crate::geometry::{object_transform, Extras, Homography};
use crate::init::BinaryMask;
use crate::renderer::PixelGrid;

/// Everything needed to produce one synthetic video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub frame_count: usize,
    /// ODE parameters by short name (`length`, `damping`, ...).
    pub physical: BTreeMap<String, f64>,
    pub initial_state: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    pub homography: [f64; 8],
    pub background: TextureSpec,
    /// One sprite per object.
    pub sprites: Vec<Sprite>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// RK4 steps per frame interval for the reference trajectory.
    pub substeps: usize,
    /// Coverage samples per pixel side.
    pub supersample: usize,
    /// Dilation radius in pixels of the rough first-frame masks.
    pub coarse_dilation: usize,
}

const PARAM_NAMES: [(Family, &[&str]); 4] = [
    (Family::Pendulum, &["length", "damping"]),
    (Family::Spring, &["stiffness", "rest_length"]),
    (Family::Block, &["incline", "friction"]),
    (Family::Ball, &[]),
];

fn param_names(family: Family) -> &'static [&'static str] {
    PARAM_NAMES.iter().find(|(f, _)| *f == family).map(|(_, n)| *n).unwrap_or(&[])
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("resolution must be positive".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.frame_count == 0 || self.substeps == 0 || self.supersample == 0 {
            return bad("frame count, substeps and supersample must be at least 1".into());
        }
        if self.train.is_empty() {
            return bad("the split has no training frames".into());
        }
        if let Some(i) = self.train.iter().chain(&self.test).find(|&&i| i >= self.frame_count) {
            return bad(format!("split index {i} is not below the frame count {}", self.frame_count));
        }
        if self.train.iter().any(|i| self.test.contains(i)) {
            return bad("train and test frames overlap".into());
        }
        if self.initial_state.len() != self.family.state_dim() {
            return bad(format!(
                "{} state has {} entries, expected {}",
                self.family,
                self.initial_state.len(),
                self.family.state_dim()
            ));
        }
        for name in param_names(self.family) {
            if !self.physical.contains_key(*name) {
                return bad(format!("{} scenario lacks `{name}`", self.family));
            }
        }
        let needs = match self.family {
            Family::Pendulum => self.pivot.is_some(),
            Family::Spring => true,
            Family::Block => self.origin.is_some() && self.track_angle.is_some() && self.scale.is_some(),
            Family::Ball => self.origin.is_some() && self.scale.is_some(),
        };
        if !needs {
            return bad(format!("{} scenario lacks its placement parameters", self.family));
        }
        if self.sprites.len() != self.family.object_count() {
            return bad(format!(
                "{} needs {} sprites, got {}",
                self.family,
                self.family.object_count(),
                self.sprites.len()
            ));
        }
        for s in &self.sprites {
            s.shape.validate()?;
        }
        Homography::from_slice(&self.homography)?;
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.frame_count).map(|k| k as f64 / self.fps).collect()
    }

    pub fn grid(&self) -> Result<PixelGrid> {
        PixelGrid::new(self.width, self.height)
    }

    pub fn truth(&self) -> Truth {
        Truth {
            family: self.family,
            physical: self.physical.clone(),
            initial_state: self.initial_state.clone(),
            pivot: self.pivot,
            origin: self.origin,
            track_angle: self.track_angle,
            scale: self.scale,
            homography: self.homography,
            train: self.train.clone(),
            test: self.test.clone(),
        }
    }

    /// Reference states at every frame time.
    pub fn states(&self) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::inference();
        let ode = self.ode(&tape)?;
        let z0: Vec<Var> = self.initial_state.iter().map(|&v| tape.scalar(v)).collect();
        let times = self.times();
        if times.len() == 1 {
            return Ok(vec![self.initial_state.clone()]);
        }
        Ok(integrate(|z| ode.rhs(z), &z0, &times, self.substeps)?.values())
    }

    fn ode<'t>(&self, tape: &'t Tape) -> Result<OdeParams<'t>> {
        let p = |n: &str| tape.scalar(self.physical[n]);
        Ok(match self.family {
            Family::Pendulum => OdeParams::Pendulum {
                length: p("length"),
                damping: p("damping"),
            },
            Family::Spring => OdeParams::Spring {
                stiffness: p("stiffness"),
                rest_length: p("rest_length"),
            },
            Family::Block => OdeParams::Block {
                incline: p("incline"),
                friction: p("friction"),
            },
            Family::Ball => OdeParams::Ball,
        })
    }

    fn extras<'t>(&self, tape: &'t Tape) -> Extras<'t> {
        let v2 = |p: Option<[f64; 2]>| tape.constant(Tensor::vector(p.unwrap_or_default().to_vec()));
        let s = |v: Option<f64>| tape.scalar(v.unwrap_or_default());
        match self.family {
            Family::Pendulum => Extras::Pendulum { pivot: v2(self.pivot) },
            Family::Spring => Extras::Spring,
            Family::Block => Extras::Block {
                origin: v2(self.origin),
                track_angle: s(self.track_angle),
                scale: s(self.scale),
            },
            Family::Ball => Extras::Ball {
                origin: v2(self.origin),
                scale: s(self.scale),
            },
        }
    }

    /// Global-to-local map of `object` at `state`, the same map the scene
    /// model uses.
    pub fn local_points(&self, state: &[f64], object: usize, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        let tape = Tape::inference();
        let z: Vec<Var> = state.iter().map(|&v| tape.scalar(v)).collect();
        let extras = self.extras(&tape);
        let h = if self.homography == Homography::IDENTITY.entries {
            None
        } else {
            Some(tape.constant(Tensor::vector(self.homography.to_vec())))
        };
        let flat = points.iter().flat_map(|p| p.iter().copied()).collect();
        let x = tape.constant(Tensor::matrix(points.len(), 2, flat)?);
        let local = object_transform(&z, &extras, h, object, x)?;
        Ok(local.values().chunks(2).map(|c| [c[0], c[1]]).collect())
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn dilate(mask: &BinaryMask, radius: usize) -> Result<BinaryMask> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let r = radius as i64;
    let mut out = vec![false; mask.data.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask.data[(y * w + x) as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r * r && (0..w).contains(&nx) && (0..h).contains(&ny) {
                        out[(ny * w + nx) as usize] = true;
                    }
                }
            }
        }
    }
    BinaryMask::new(mask.width, mask.height, out)
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Render every frame of `scenario`. Frames are quantized to 8 bits so the
/// in-memory dataset equals what a round trip through image files yields.
pub fn generate(scenario: &Scenario, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    let grid = scenario.grid()?;
    let n = grid.len();
    let bg = scenario.background.build(
        scenario.width,
        scenario.height,
        {
            let [hx, hy] = grid.half_extent();
            [-hx, -hy, hx, hy]
        },
        mix_seed(seed, 0),
    );
    let textures: Vec<Texture> = scenario
        .sprites
        .iter()
        .enumerate()
        .map(|(k, s)| s.build_texture(mix_seed(seed, k as u64 + 1)))
        .collect();
    let states = scenario.states()?;
    let objects = scenario.family.object_count();
    let mut frames = Vec::with_capacity(scenario.frame_count);
    let mut masks: Vec<Vec<BinaryMask>> = vec![Vec::with_capacity(scenario.frame_count); objects];
    for state in &states {
        let rasters = (0..objects)
            .map(|k| {
                let shape = &scenario.sprites[k].shape;
                rasterize_sprite(
                    &textures[k],
                    |p| shape.contains(p),
                    |pts| scenario.local_points(state, k, pts),
                    &grid,
                    scenario.supersample,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rgb = Vec::with_capacity(3 * n);
        for i in 0..n {
            // highest coverage wins, ties to the lower index
            let mut best = 0;
            for k in 1..objects {
                if rasters[k].coverage[i] > rasters[best].coverage[i] {
                    best = k;
                }
            }
            let o = rasters[best].coverage[i];
            for c in 0..3 {
                let b = bg.data[3 * i + c];
                rgb.push(quantize((1.0 - o) * b + o * rasters[best].rgb[3 * i + c]));
            }
        }
        frames.push(rgb);
        for (k, r) in rasters.into_iter().enumerate() {
            masks[k].push(BinaryMask::new(scenario.width, scenario.height, r.mask)?);
        }
    }
    let coarse = masks
        .iter()
        .map(|m| dilate(&m[0], scenario.coarse_dilation))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        family: scenario.family,
        grid,
        times: scenario.times(),
        frames: Some(frames),
        masks,
        coarse: Some(coarse),
        train: scenario.train.clone(),
        test: scenario.test.clone(),
        truth: Some(scenario.truth()),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Interleaved split with extrapolation: every other frame of the first
/// `2·n_train − 1` trains, everything else tests.
pub fn interleaved_split(n_train: usize, frame_count: usize) -> (Vec<usize>, Vec<usize>) {
    let train: Vec<usize> = (0..n_train).map(|i| 2 * i).filter(|&i| i < frame_count).collect();
    let test = (0..frame_count).filter(|i| !train.contains(i)).collect();
    (train, test)
}

/// Contiguous split: the first `n_train` frames train, the rest test.
pub fn prefix_split(n_train: usize, frame_count: usize) -> (Vec<usize>, Vec<usize>) {
    let n = n_train.min(frame_count);
    ((0..n).collect(), (n..frame_count).collect())
}

/// Ready-made scenarios.
pub mod presets {
    use super::*;

    fn noise(cells: usize, a: [f64; 3], b: [f64; 3]) -> TextureSpec {
        TextureSpec::Noise {
            cells,
            octaves: 2,
            colors: [a, b],
        }
    }

    /// Knobs of the pendulum scenario family.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct PendulumSetup {
        pub length: f64,
        pub damping: f64,
        pub phi0: f64,
        pub omega0: f64,
        pub pivot: [f64; 2],
        pub rod_length: f64,
    }

    impl Default for PendulumSetup {
        fn default() -> Self {
            Self {
                length: 1.6,
                damping: 0.35,
                phi0: 0.5,
                omega0: 0.0,
                pivot: [0.0, -0.6],
                rod_length: 0.95,
            }
        }
    }

    /// Pendulum at 64x64: 41 frames at 10 fps, 15 interleaved training
    /// frames and 26 test frames of which the last 12 extrapolate.
    pub fn pendulum(setup: PendulumSetup) -> Scenario {
        let frame_count = 41;
        let (train, test) = interleaved_split(15, frame_count);
        Scenario {
            family: Family::Pendulum,
            width: 64,
            height: 64,
            fps: 10.0,
            frame_count,
            physical: BTreeMap::from([("length".into(), setup.length), ("damping".into(), setup.damping)]),
            initial_state: vec![setup.phi0, setup.omega0],
            pivot: Some(setup.pivot),
            origin: None,
            track_angle: None,
            scale: None,
            homography: Homography::IDENTITY.entries,
            background: noise(5, [0.15, 0.25, 0.35], [0.55, 0.6, 0.45]),
            sprites: vec![Sprite {
                shape: Shape::Pendulum {
                    rod_length: setup.rod_length,
                    rod_width: 0.12,
                    bob_radius: 0.17,
                },
                texture: noise(3, [0.95, 0.35, 0.1], [1.0, 0.9, 0.3]),
                texels: 24,
            }],
            train,
            test,
            substeps: 50,
            supersample: 4,
            coarse_dilation: 2,
        }
    }

    /// Mask-only pendulum: 20 frames, the first 10 train and the last 10
    /// extrapolate.
    pub fn pendulum_mask() -> Scenario {
        let mut s = pendulum(PendulumSetup::default());
        s.frame_count = 20;
        (s.train, s.test) = prefix_split(10, 20);
        s
    }

    /// Two point-symmetric blobs joined by an invisible spring: 25 frames at
    /// 5 fps, 13 train and 12 extrapolate.
    pub fn spring() -> Scenario {
        let frame_count = 25;
        let (train, test) = prefix_split(13, frame_count);
        let blob = |tilt: f64, texture: TextureSpec| Sprite {
            shape: Shape::Blob {
                lobes: vec![
                    Lobe {
                        center: [0.0, 0.0],
                        radii: [0.14, 0.22],
                        angle: tilt,
                    },
                    Lobe {
                        center: [0.08, -0.11],
                        radii: [0.12, 0.08],
                        angle: tilt,
                    },
                    Lobe {
                        center: [-0.08, 0.11],
                        radii: [0.12, 0.08],
                        angle: tilt,
                    },
                ],
            },
            texture,
            texels: 16,
        };
        Scenario {
            family: Family::Spring,
            width: 64,
            height: 64,
            fps: 5.0,
            frame_count,
            physical: BTreeMap::from([("stiffness".into(), 3.0), ("rest_length".into(), 0.25)]),
            initial_state: vec![-0.35, 0.02, 0.35, -0.02, 0.0, 0.25, 0.0, -0.25],
            pivot: None,
            origin: None,
            track_angle: None,
            scale: None,
            homography: Homography::IDENTITY.entries,
            background: noise(5, [0.1, 0.12, 0.3], [0.4, 0.5, 0.55]),
            sprites: vec![
                blob(0.3, noise(2, [0.95, 0.85, 0.2], [1.0, 0.6, 0.1])),
                blob(-0.4, noise(2, [0.2, 0.9, 0.4], [0.7, 1.0, 0.6])),
            ],
            train,
            test,
            substeps: 50,
            supersample: 4,
            coarse_dilation: 2,
        }
    }

    /// Block sliding down an incline drawn at the track angle.
    pub fn block() -> Scenario {
        let frame_count = 20;
        let (train, test) = prefix_split(12, frame_count);
        Scenario {
            family: Family::Block,
            width: 64,
            height: 64,
            fps: 10.0,
            frame_count,
            physical: BTreeMap::from([("incline".into(), 0.5), ("friction".into(), 0.2)]),
            initial_state: vec![0.0, 0.5],
            pivot: None,
            origin: Some([-0.6, -0.4]),
            track_angle: Some(0.5),
            scale: Some(0.1),
            homography: Homography::IDENTITY.entries,
            background: TextureSpec::Checker {
                cells: 8,
                colors: [[0.3, 0.3, 0.35], [0.5, 0.5, 0.45]],
            },
            sprites: vec![Sprite {
                shape: Shape::Rect {
                    half_width: 0.15,
                    half_height: 0.1,
                },
                texture: noise(2, [0.8, 0.2, 0.2], [1.0, 0.7, 0.5]),
                texels: 12,
            }],
            train,
            test,
            substeps: 50,
            supersample: 4,
            coarse_dilation: 2,
        }
    }

    /// Ball thrown up and across.
    pub fn ball() -> Scenario {
        let frame_count = 16;
        let (train, test) = prefix_split(10, frame_count);
        Scenario {
            family: Family::Ball,
            width: 64,
            height: 64,
            fps: 15.0,
            frame_count,
            physical: BTreeMap::new(),
            initial_state: vec![0.0, 0.0, 1.5, -4.0],
            pivot: None,
            origin: Some([-0.5, 0.2]),
            track_angle: None,
            scale: Some(0.25),
            homography: Homography::IDENTITY.entries,
            background: noise(4, [0.2, 0.35, 0.2], [0.5, 0.6, 0.7]),
            sprites: vec![Sprite {
                shape: Shape::Disk { radius: 0.12 },
                texture: noise(2, [0.9, 0.9, 0.9], [0.6, 0.3, 0.8]),
                texels: 12,
            }],
            train,
            test,
            substeps: 50,
            supersample: 4,
            coarse_dilation: 2,
        }
    }

    /// Scenario by preset name.
    pub fn by_name(name: &str) -> Result<Scenario> {
        Ok(match name {
            "pendulum" => pendulum(PendulumSetup::default()),
            "pendulum-mask" => pendulum_mask(),
            "spring" => spring(),
            "block" => block(),
            "ball" => ball(),
            other => return Err(Error::Config(format!("unknown scenario preset `{other}`"))),
        })
    }
}
