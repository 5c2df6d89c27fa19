//! Diffusion noise schedules and inference timestep plans.
//!
//! `alpha_bars[t]` is the cumulative product `∏_{s≤t}(1 − β_s)` (often written
//! ᾱ_t; some texts call the same quantity α_t).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    /// β interpolated linearly.
    Linear,
    /// √β interpolated linearly, then squared.
    ScaledLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(
        num_train_steps: usize,
        beta_start: f64,
        beta_end: f64,
        kind: BetaKind,
    ) -> Result<Self> {
        if num_train_steps == 0 {
            return Err(Error::param("num_train_steps must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }

        let lerp = |lo: f64, hi: f64, i: usize| {
            if num_train_steps == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (num_train_steps - 1) as f64
            }
        };
        let betas: Vec<f64> = (0..num_train_steps)
            .map(|i| match kind {
                BetaKind::Linear => lerp(beta_start, beta_end, i),
                BetaKind::ScaledLinear => lerp(beta_start.sqrt(), beta_end.sqrt(), i).powi(2),
            })
            .collect();

        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one beta"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bars = betas
            .iter()
            .scan(1.0, |prod, beta| {
                *prod *= 1.0 - beta;
                Some(*prod)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn num_train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or(Error::Index {
            index: t,
            len: self.alpha_bars.len(),
        })
    }

    /// Evenly spaced descending timesteps `N−1, N−1−k, …` with stride
    /// `k = floor(N / steps)`.
    pub fn plan(&self, num_inference_steps: usize) -> Result<TimestepPlan> {
        let n = self.num_train_steps();
        if num_inference_steps == 0 || num_inference_steps > n {
            return Err(Error::param(format!(
                "num_inference_steps must be in 1..={n}, got {num_inference_steps}"
            )));
        }
        let stride = n / num_inference_steps;
        // stride * (steps - 1) <= n - stride, so the last entry stays >= 0
        let timesteps = (0..num_inference_steps)
            .map(|i| n - 1 - i * stride)
            .collect();
        TimestepPlan::new(timesteps, n)
    }

    /// CSV with columns `t,beta,alpha_bar`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,beta,alpha_bar")?;
        for (t, (b, a)) in self.betas.iter().zip(&self.alpha_bars).enumerate() {
            writeln!(out, "{t},{b:e},{a:e}")?;
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    /// 1000 steps, scaled-linear betas from 0.00085 to 0.012.
    fn default() -> Self {
        Self::new(1000, 0.00085, 0.012, BetaKind::ScaledLinear).expect("default schedule is valid")
    }
}

/// Strictly decreasing sequence of schedule indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPlan {
    timesteps: Vec<usize>,
}

impl TimestepPlan {
    pub fn new(timesteps: Vec<usize>, num_train_steps: usize) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::param("timestep plan is empty"));
        }
        if timesteps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::param("timestep plan must be strictly decreasing"));
        }
        if timesteps[0] >= num_train_steps {
            return Err(Error::Index {
                index: timesteps[0],
                len: num_train_steps,
            });
        }
        Ok(Self { timesteps })
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }
}
