//! Dense real tensors in codec space.

use crate::error::{Error, Result};

/// A `(channels, height, width)` tensor stored row-major, channel planes first.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Latent {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (c, h, w) = dims;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "latent dims must be positive, got {dims:?}"
            )));
        }
        if data.len() != c * h * w {
            return Err(Error::shape(format!(
                "latent data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!(
                "latent value at index {i} is not finite"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: (usize, usize, usize), value: f64) -> Self {
        let (c, h, w) = dims;
        assert!(c > 0 && h > 0 && w > 0, "latent dims must be positive");
        Self {
            dims,
            data: vec![value; c * h * w],
        }
    }

    /// Scalar latent, handy for hand-checked examples.
    pub fn scalar(value: f64) -> Self {
        Self {
            dims: (1, 1, 1),
            data: vec![value],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.dims;
        self.data[(c * h + y) * w + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_dims(&self, other: &Latent, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Elementwise combination of two same-shaped latents.
    pub fn zip_map(&self, other: &Latent, f: impl Fn(f64, f64) -> f64) -> Result<Latent> {
        self.check_same_dims(other, "elementwise op")?;
        Ok(Latent {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Latent {
        Latent {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    /// `‖self − other‖₂`.
    pub fn l2_distance(&self, other: &Latent) -> Result<f64> {
        self.check_same_dims(other, "l2 distance")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}
