//! Binary 8-bit netpbm images: P6 (RGB) and P5 (gray).

use std::fs;
use std::path::Path;

use super::io::write_atomic;
use crate::error::{Error, Result};

/// 8-bit image with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    pub fn from_unit(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        if values.len() != width * height * channels {
            return Err(Error::Invalid(format!(
                "{} values for a {width}x{height}x{channels} image",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: values.iter().map(|&v| to_byte(v)).collect(),
        })
    }

    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Self {
        Self {
            width,
            height,
            channels: 1,
            data: mask.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("netpbm: {m}"));
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let channels = match token()?.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(bad(&format!("unsupported format `{other}`"))),
        };
        let num = |s: String| s.parse::<usize>().map_err(|_| bad(&format!("bad number `{s}`")));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval != 255 {
            return Err(bad(&format!("only 8-bit images are supported, max value {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let len = width * height * channels;
        if bytes.len() < start + len {
            return Err(bad("truncated raster"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: bytes[start..start + len].to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}
