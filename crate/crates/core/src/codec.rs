//! Toy image ↔ latent codec standing in for a learned autoencoder.
//!
//! Pixels map to latents through `2p − 1`. Pool mode additionally averages
//! `factor × factor` blocks on encode and repeats them on decode, so
//! `encode ∘ decode` is exact on latents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::latent::Latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    Identity,
    #[default]
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub mode: CodecMode,
    pub factor: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            mode: CodecMode::Pool,
            factor: 8,
        }
    }
}

impl CodecConfig {
    pub fn identity() -> Self {
        Self {
            mode: CodecMode::Identity,
            factor: 1,
        }
    }

    pub fn pool(factor: usize) -> Self {
        Self {
            mode: CodecMode::Pool,
            factor,
        }
    }

    fn effective_factor(&self) -> usize {
        match self.mode {
            CodecMode::Identity => 1,
            CodecMode::Pool => self.factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == CodecMode::Pool && self.factor == 0 {
            return Err(Error::param("pool factor must be positive"));
        }
        Ok(())
    }

    /// Latent dims for an image of the given size.
    pub fn latent_dims(
        &self,
        width: usize,
        height: usize,
        channels: usize,
    ) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let f = self.effective_factor();
        if !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(Error::shape(format!(
                "pool factor {f} must divide image size {width}x{height}"
            )));
        }
        Ok((channels, height / f, width / f))
    }
}

pub fn encode(img: &Image, cfg: &CodecConfig) -> Result<Latent> {
    let (c, lh, lw) = cfg.latent_dims(img.width(), img.height(), img.channels())?;
    let f = cfg.effective_factor();
    let norm = (f * f) as f64;
    let mut data = Vec::with_capacity(c * lh * lw);
    for ch in 0..c {
        for by in 0..lh {
            for bx in 0..lw {
                let mut acc = 0.0;
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        acc += 2.0 * img.get(x, y, ch) - 1.0;
                    }
                }
                data.push(if f == 1 { acc } else { acc / norm });
            }
        }
    }
    Latent::new((c, lh, lw), data)
}

/// Inverse map, clamped into `[0, 1]`.
pub fn decode(z: &Latent, cfg: &CodecConfig) -> Result<Image> {
    cfg.validate()?;
    let (c, lh, lw) = z.dims();
    if c != 1 && c != 3 {
        return Err(Error::shape(format!(
            "decoded latent needs 1 or 3 channels, got {c}"
        )));
    }
    let f = cfg.effective_factor();
    let (w, h) = (lw * f, lh * f);
    Image::from_fn(w, h, c, |x, y, ch| (z.get(ch, y / f, x / f) + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mid_gray_encodes_to_zero() {
        let img = Image::filled(4, 4, 3, 0.5);
        let z = encode(&img, &CodecConfig::identity()).unwrap();
        assert!(z.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(
            decode(&Latent::zeros((3, 2, 2)), &CodecConfig::identity()).unwrap(),
            Image::filled(2, 2, 3, 0.5)
        );
    }

    #[test]
    fn pool_block_average() {
        let img = Image::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let z = encode(&img, &CodecConfig::pool(2)).unwrap();
        assert_eq!(z.dims(), (1, 1, 1));
        assert_eq!(z.as_slice(), &[0.0]);
    }

    #[test]
    fn pool_requires_divisibility() {
        let img = Image::filled(6, 4, 1, 0.5);
        assert!(matches!(
            encode(&img, &CodecConfig::pool(4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn decode_clamps() {
        let z = Latent::new((1, 1, 2), vec![3.0, -3.0]).unwrap();
        let img = decode(&z, &CodecConfig::identity()).unwrap();
        assert_eq!(img.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn identity_round_trip_on_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..5 * 3 * 3)
            .map(|_| rng.random_range(0.0..=1.0))
            .collect();
        let img = Image::new(5, 3, 3, data).unwrap();
        let back = decode(
            &encode(&img, &CodecConfig::identity()).unwrap(),
            &CodecConfig::identity(),
        )
        .unwrap();
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn identity_round_trip_is_byte_exact_on_8bit_levels() {
        let data: Vec<f64> = (0..=255).map(|k| k as f64 / 255.0).collect();
        let img = Image::new(256, 1, 1, data).unwrap();
        let back = decode(
            &encode(&img, &CodecConfig::identity()).unwrap(),
            &CodecConfig::identity(),
        )
        .unwrap();
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            assert_eq!(crate::imageio::quantize(*a), crate::imageio::quantize(*b));
        }
    }

    #[test]
    fn pool_right_inverse_on_latents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for f in [1, 2, 4, 8] {
            let dims = (3, 3, 5);
            let data = (0..45).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let z = Latent::new(dims, data).unwrap();
            let cfg = CodecConfig::pool(f);
            let back = encode(&decode(&z, &cfg).unwrap(), &cfg).unwrap();
            for (a, b) in back.as_slice().iter().zip(z.as_slice()) {
                assert!((a - b).abs() < 1e-12, "factor {f}");
            }
        }
    }
}
