//! Dataset directories and JSON files.
//!
//! ```text
//! frames/NNNN.ppm        RGB frames
//! masks/obj{K}/NNNN.pgm  per-object masks
//! coarse/obj{K}.pgm      rough first-frame masks
//! times.txt              one time in seconds per line
//! split.json             family and train/test indices
//! truth.json             ground truth, synthetic data only
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::netpbm::Image;
use crate::dataset::{Dataset, Truth};
use crate::dynamics::Family;
use crate::error::{Error, Result};
use crate::init::BinaryMask;
use crate::renderer::PixelGrid;

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Parse a JSON file; read and parse failures are both reported with
/// `make_err`.
pub fn read_json_with<T: DeserializeOwned>(path: &Path, make_err: fn(String) -> Error) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| make_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| make_err(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_json_with(path, Error::Data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub family: Family,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:04}.{ext}")
}

/// Exact text form of a time; `{}` on f64 round-trips.
fn format_times(times: &[f64]) -> String {
    times.iter().map(|t| format!("{t}\n")).collect()
}

pub fn write_frames(dir: &Path, grid: &PixelGrid, frames: &[(usize, &[f64])]) -> Result<()> {
    for (i, rgb) in frames {
        Image::from_unit(grid.width, grid.height, 3, rgb)?.write(&dir.join(frame_name(*i, "ppm")))?;
    }
    Ok(())
}

pub fn write_masks(dir: &Path, masks: &[(usize, &BinaryMask)]) -> Result<()> {
    for (i, m) in masks {
        Image::from_mask(m.width, m.height, &m.data).write(&dir.join(frame_name(*i, "pgm")))?;
    }
    Ok(())
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(frames) = &ds.frames {
        let list: Vec<(usize, &[f64])> = frames.iter().enumerate().map(|(i, f)| (i, f.as_slice())).collect();
        write_frames(&dir.join("frames"), &ds.grid, &list)?;
    }
    for (k, obj) in ds.masks.iter().enumerate() {
        let list: Vec<(usize, &BinaryMask)> = obj.iter().enumerate().collect();
        write_masks(&dir.join("masks").join(format!("obj{k}")), &list)?;
    }
    if let Some(coarse) = &ds.coarse {
        for (k, m) in coarse.iter().enumerate() {
            Image::from_mask(m.width, m.height, &m.data).write(&dir.join("coarse").join(format!("obj{k}.pgm")))?;
        }
    }
    write_atomic(&dir.join("times.txt"), format_times(&ds.times).as_bytes())?;
    write_json(
        &dir.join("split.json"),
        &Split {
            family: ds.family,
            train: ds.train.clone(),
            test: ds.test.clone(),
        },
    )?;
    if let Some(truth) = &ds.truth {
        write_json(&dir.join("truth.json"), truth)?;
    }
    Ok(())
}

fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = Image::read(path)?;
    if img.channels != 1 {
        return Err(Error::Data(format!("{}: masks must be gray images", path.display())));
    }
    BinaryMask::new(img.width, img.height, img.data.iter().map(|&b| b >= 128).collect())
}

/// Numbered files `0000.ext, 0001.ext, ...` in `dir`, which must be
/// contiguous from zero.
fn numbered(dir: &Path, ext: &str, count: usize) -> Result<Vec<PathBuf>> {
    (0..count)
        .map(|i| {
            let p = dir.join(frame_name(i, ext));
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Data(format!("missing {}", p.display())))
            }
        })
        .collect()
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("dataset directory {} does not exist", dir.display())));
    }
    let times_path = dir.join("times.txt");
    let text = fs::read_to_string(&times_path).map_err(|e| Error::io(&times_path, e))?;
    let times = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("{}: bad time `{l}`", times_path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    let split: Split = read_json(&dir.join("split.json"))?;
    let n = times.len();
    let mut grid = None;
    let mut check_grid = |w: usize, h: usize, what: &Path| -> Result<()> {
        match grid {
            None => {
                grid = Some(PixelGrid::new(w, h)?);
                Ok(())
            }
            Some(g) if g.width == w && g.height == h => Ok(()),
            Some(_) => Err(Error::Data(format!("{} has a different size", what.display()))),
        }
    };
    let frames_dir = dir.join("frames");
    let frames = if frames_dir.is_dir() {
        let mut out = Vec::with_capacity(n);
        for p in numbered(&frames_dir, "ppm", n)? {
            let img = Image::read(&p)?;
            if img.channels != 3 {
                return Err(Error::Data(format!("{}: frames must be RGB", p.display())));
            }
            check_grid(img.width, img.height, &p)?;
            out.push(img.to_unit());
        }
        Some(out)
    } else {
        None
    };
    let mut masks = Vec::new();
    for k in 0..split.family.object_count() {
        let d = dir.join("masks").join(format!("obj{k}"));
        if !d.is_dir() {
            break;
        }
        let mut obj = Vec::with_capacity(n);
        for p in numbered(&d, "pgm", n)? {
            let m = read_mask(&p)?;
            check_grid(m.width, m.height, &p)?;
            obj.push(m);
        }
        masks.push(obj);
    }
    let coarse_dir = dir.join("coarse");
    let coarse = if coarse_dir.is_dir() {
        let c = (0..split.family.object_count())
            .map(|k| {
                let p = coarse_dir.join(format!("obj{k}.pgm"));
                let m = read_mask(&p)?;
                check_grid(m.width, m.height, &p)?;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(c)
    } else {
        None
    };
    let truth_path = dir.join("truth.json");
    let truth: Option<Truth> = if truth_path.is_file() {
        Some(read_json(&truth_path)?)
    } else {
        None
    };
    if let Some(t) = &truth {
        if t.family != split.family {
            return Err(Error::Data("truth and split disagree on the family".into()));
        }
    }
    let grid = grid.ok_or_else(|| Error::Data(format!("{} has neither frames nor masks", dir.display())))?;
    let ds = Dataset {
        family: split.family,
        grid,
        times,
        frames,
        masks,
        coarse,
        train: split.train,
        test: split.test,
        truth,
    };
    ds.validate()?;
    Ok(ds)
}
