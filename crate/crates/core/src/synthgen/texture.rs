use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;

/// RGB raster covering an axis-aligned rectangle, sampled bilinearly with
/// texel centers on a regular lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<f64>,
    /// `[x0, y0, x1, y1]` covered by the raster.
    pub extent: [f64; 4],
}

impl Texture {
    pub fn texel(&self, col: usize, row: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear sample at `p`; outside the texel lattice the edge value is
    /// held.
    pub fn sample(&self, p: [f64; 2]) -> [f64; 3] {
        let [x0, y0, x1, y1] = self.extent;
        let u = (p[0] - x0) / (x1 - x0) * self.width as f64 - 0.5;
        let v = (p[1] - y0) / (y1 - y0) * self.height as f64 - 0.5;
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let (fu, fv) = (u - c0 as f64, v - r0 as f64);
        let (a, b, c, d) = (self.texel(c0, r0), self.texel(c1, r0), self.texel(c0, r1), self.texel(c1, r1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + fu * (b[k] - a[k]);
            let bottom = c[k] + fu * (d[k] - c[k]);
            out[k] = top + fv * (bottom - top);
        }
        out
    }
}

/// Procedural texture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TextureSpec {
    Flat {
        color: [f64; 3],
    },
    /// Square cells alternating between two colors.
    Checker {
        cells: usize,
        colors: [[f64; 3]; 2],
    },
    /// Bilinearly interpolated value noise mixing two colors, summed over
    /// octaves of doubling frequency.
    Noise {
        cells: usize,
        octaves: usize,
        colors: [[f64; 3]; 2],
    },
}

impl TextureSpec {
    /// Raster of `w x h` texels over `extent`.
    pub fn build(&self, w: usize, h: usize, extent: [f64; 4], seed: u64) -> Texture {
        let mut data = Vec::with_capacity(3 * w * h);
        match self {
            TextureSpec::Flat { color } => {
                for _ in 0..w * h {
                    data.extend_from_slice(color);
                }
            }
            TextureSpec::Checker { cells, colors } => {
                let cells = (*cells).max(1);
                for r in 0..h {
                    for c in 0..w {
                        let parity = (c * cells / w + r * cells / h) % 2;
                        data.extend_from_slice(&colors[parity]);
                    }
                }
            }
            TextureSpec::Noise { cells, octaves, colors } => {
                let mut rng = seeded(seed);
                let mut field = vec![0.0; w * h];
                let mut amp_total = 0.0;
                for o in 0..(*octaves).max(1) {
                    let n = (cells << o).max(1);
                    let lattice: Vec<f64> = (0..(n + 1) * (n + 1)).map(|_| rng.gen()).collect();
                    let amp = 0.5f64.powi(o as i32);
                    amp_total += amp;
                    for r in 0..h {
                        for c in 0..w {
                            let u = (c as f64 + 0.5) / w as f64 * n as f64;
                            let v = (r as f64 + 0.5) / h as f64 * n as f64;
                            let (i, j) = ((u.floor() as usize).min(n - 1), (v.floor() as usize).min(n - 1));
                            let (fu, fv) = (u - i as f64, v - j as f64);
                            let at = |a: usize, b: usize| lattice[b * (n + 1) + a];
                            let top = at(i, j) + fu * (at(i + 1, j) - at(i, j));
                            let bottom = at(i, j + 1) + fu * (at(i + 1, j + 1) - at(i, j + 1));
                            field[r * w + c] += amp * (top + fv * (bottom - top));
                        }
                    }
                }
                for f in field {
                    let t = f / amp_total;
                    for k in 0..3 {
                        data.push(colors[0][k] + t * (colors[1][k] - colors[0][k]));
                    }
                }
            }
        }
        Texture {
            width: w,
            height: h,
            data,
            extent,
        }
    }
}
