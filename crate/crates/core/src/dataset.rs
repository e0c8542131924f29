//! In-memory video dataset and its ground truth record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::Family;
use crate::error::{Error, Result};
use crate::init::BinaryMask;
use crate::renderer::PixelGrid;

/// Known parameters of a generated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub family: Family,
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
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub family: Family,
    pub grid: PixelGrid,
    pub times: Vec<f64>,
    /// Row-major RGB in `[0, 1]` per frame; `None` for mask-only data.
    pub frames: Option<Vec<Vec<f64>>>,
    /// `masks[object][frame]`; empty when the dataset has no masks.
    pub masks: Vec<Vec<BinaryMask>>,
    /// Rough first-frame masks, one per object.
    pub coarse: Option<Vec<BinaryMask>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn has_masks(&self) -> bool {
        !self.masks.is_empty() && self.masks.iter().all(|m| m.len() == self.frame_count())
    }

    /// Union of all object masks in one frame.
    pub fn combined_mask(&self, frame: usize) -> Result<BinaryMask> {
        if !self.has_masks() {
            return Err(Error::Data("dataset has no masks".into()));
        }
        let n = self.grid.len();
        let data = (0..n).map(|i| self.masks.iter().any(|m| m[frame].data[i])).collect();
        BinaryMask::new(self.grid.width, self.grid.height, data)
    }

    /// Nominal spacing between consecutive frames.
    pub fn frame_interval(&self) -> f64 {
        let mut d: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        if d.is_empty() {
            return 1.0;
        }
        d.sort_by(f64::total_cmp);
        d[0]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frame_count();
        if n == 0 {
            return Err(Error::Data("dataset has no frames".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("frame times must be strictly increasing".into()));
        }
        if let Some(frames) = &self.frames {
            if frames.len() != n {
                return Err(Error::Data(format!("{} frames for {n} times", frames.len())));
            }
            if frames.iter().any(|f| f.len() != 3 * self.grid.len()) {
                return Err(Error::Data("frame size does not match the grid".into()));
            }
        }
        for m in self.masks.iter().flatten() {
            if m.width != self.grid.width || m.height != self.grid.height {
                return Err(Error::Data("mask size does not match the frames".into()));
            }
        }
        if !self.masks.is_empty() && self.masks.len() != self.family.object_count() {
            return Err(Error::Data(format!(
                "{} needs masks for {} objects, found {}",
                self.family,
                self.family.object_count(),
                self.masks.len()
            )));
        }
        if self.train.is_empty() {
            return Err(Error::Data("no training frames".into()));
        }
        if self.train.iter().chain(&self.test).any(|&i| i >= n) {
            return Err(Error::Data("split index out of range".into()));
        }
        if self.train.iter().any(|i| self.test.contains(i)) {
            return Err(Error::Data("train and test frames overlap".into()));
        }
        if self.frames.is_none() && !self.has_masks() {
            return Err(Error::Data("dataset has neither frames nor masks".into()));
        }
        Ok(())
    }

    /// Training frames in time order.
    pub fn train_frames(&self) -> Vec<usize> {
        let mut t = self.train.clone();
        t.sort_by(|a, b| self.times[*a].total_cmp(&self.times[*b]));
        t
    }
}
