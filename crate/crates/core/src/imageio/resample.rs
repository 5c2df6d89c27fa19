//! Separable resampling.
//!
//! Destination pixel `d` samples source coordinate `(d + 0.5)·scale − 0.5`
//! with `scale = src / dst`; source reads are clamped to the edge.

use serde::{Deserialize, Serialize};

use super::{clamp01, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKernel {
    Nearest,
    /// Catmull-Rom cubic (a = −0.5).
    #[default]
    Bicubic,
}

const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = −0.5`.
pub fn catmull_rom_weight(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Per-destination taps: source indices and weights.
fn taps(src: usize, dst: usize, kernel: ResampleKernel) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let last = src as isize - 1;
    (0..dst)
        .map(|d| match kernel {
            ResampleKernel::Nearest => {
                let s = (((d as f64 + 0.5) * scale).floor() as isize).clamp(0, last);
                vec![(s as usize, 1.0)]
            }
            ResampleKernel::Bicubic => {
                let pos = (d as f64 + 0.5) * scale - 0.5;
                let base = pos.floor();
                let frac = pos - base;
                (-1..=2)
                    .map(|k| {
                        let idx = (base as isize + k).clamp(0, last) as usize;
                        (idx, catmull_rom_weight(frac - k as f64))
                    })
                    .collect()
            }
        })
        .collect()
}

pub fn resize(img: &Image, new_w: usize, new_h: usize, kernel: ResampleKernel) -> Result<Image> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::param(format!(
            "resize target must be positive, got {new_w}x{new_h}"
        )));
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    if (w, h) == (new_w, new_h) {
        return Ok(img.clone());
    }
    let src = img.as_slice();

    // horizontal pass into an unclamped buffer
    let xt = taps(w, new_w, kernel);
    let mut tmp = vec![0.0; new_w * h * c];
    for y in 0..h {
        for (dx, t) in xt.iter().enumerate() {
            for ch in 0..c {
                tmp[(y * new_w + dx) * c + ch] = t
                    .iter()
                    .map(|&(sx, wt)| wt * src[(y * w + sx) * c + ch])
                    .sum();
            }
        }
    }

    let yt = taps(h, new_h, kernel);
    let mut out = Vec::with_capacity(new_w * new_h * c);
    for t in &yt {
        for dx in 0..new_w {
            for ch in 0..c {
                let v: f64 = t
                    .iter()
                    .map(|&(sy, wt)| wt * tmp[(sy * new_w + dx) * c + ch])
                    .sum();
                out.push(clamp01(v));
            }
        }
    }
    Image::new(new_w, new_h, c, out)
}
