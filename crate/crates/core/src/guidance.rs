//! Content-consistency guidance for deterministic DDIM sampling.
//!
//! At each denoising step the predicted noise ε̂ is nudged along the negative
//! gradient of `‖x̂0(ε̂) − x_c‖²`, where `x̂0` is the clean estimate implied by
//! ε̂ and `x_c` is the content latent. The refined noise then drives an
//! ordinary DDIM update.
//!
//! Because `x̂0` is affine in ε̂, one refinement scales the content residual by
//! an exact factor, see [`residual_contraction_factor`]. That factor is the
//! main analytic oracle used by the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;

/// How the squared residual is reduced to a scalar loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// `Σ (x̂0 − x_c)²`
    #[default]
    Sum,
    /// The sum divided by the element count.
    Mean,
}

/// Interpretation of `lambda_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScale {
    /// `lambda_c` is used as-is at every step.
    #[default]
    Absolute,
    /// `lambda_c` is a fraction of each step's stability bound, so the
    /// residual contraction factor is `1 − 2·lambda_c` at every step.
    StabilityRelative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub lambda_c: f64,
    pub reduction: Reduction,
    pub enabled: bool,
    /// Refinements applied within one denoising step.
    pub iterations: usize,
    pub lambda_scale: LambdaScale,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda_c: 0.0,
            reduction: Reduction::Sum,
            enabled: true,
            iterations: 1,
            lambda_scale: LambdaScale::Absolute,
        }
    }
}

impl GuidanceConfig {
    pub fn new(lambda_c: f64, reduction: Reduction) -> Result<Self> {
        let cfg = Self {
            lambda_c,
            reduction,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return Err(Error::param(format!(
                "lambda_c must be finite and >= 0, got {}",
                self.lambda_c
            )));
        }
        if self.iterations == 0 {
            return Err(Error::param("guidance iterations must be >= 1"));
        }
        Ok(())
    }

    /// Whether this config changes anything at all.
    pub fn is_active(&self) -> bool {
        self.enabled && self.lambda_c > 0.0
    }

    /// The λ actually applied at a step with cumulative signal `alpha_bar_t`.
    pub fn effective_lambda(&self, alpha_bar_t: f64, element_count: usize) -> f64 {
        match self.lambda_scale {
            LambdaScale::Absolute => self.lambda_c,
            LambdaScale::StabilityRelative => {
                self.lambda_c * stability_bound(alpha_bar_t, self.reduction, element_count)
            }
        }
    }
}

fn check_alpha_bar(alpha_bar: f64, name: &str) -> Result<()> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::param(format!(
            "{name} must be in (0, 1], got {alpha_bar}"
        )));
    }
    Ok(())
}

fn check_open_alpha_bar(alpha_bar: f64) -> Result<()> {
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(Error::param(format!(
            "alpha_bar_t must be in (0, 1) for refinement, got {alpha_bar}"
        )));
    }
    Ok(())
}

/// Clean estimate `x̂0 = (z_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
pub fn estimate_x0(z_t: &Latent, eps_hat: &Latent, alpha_bar_t: f64) -> Result<Latent> {
    check_alpha_bar(alpha_bar_t, "alpha_bar_t")?;
    let noise_scale = (1.0 - alpha_bar_t).sqrt();
    let signal_scale = alpha_bar_t.sqrt();
    z_t.zip_map(eps_hat, |z, e| (z - noise_scale * e) / signal_scale)
}

pub fn content_loss(x0_hat: &Latent, x_c: &Latent, reduction: Reduction) -> Result<f64> {
    x0_hat.check_same_dims(x_c, "content loss")?;
    let sum: f64 = x0_hat
        .as_slice()
        .iter()
        .zip(x_c.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / x0_hat.len() as f64,
    })
}

/// Gradient of [`content_loss`]`(estimate_x0(z_t, ε̂), x_c)` with respect to ε̂:
/// `2(x̂0 − x_c)·(−√(1−ᾱ_t)/√ᾱ_t)`, divided by the element count in mean mode.
pub fn content_loss_grad(
    x0_hat: &Latent,
    x_c: &Latent,
    alpha_bar_t: f64,
    reduction: Reduction,
) -> Result<Latent> {
    check_open_alpha_bar(alpha_bar_t)?;
    let mut chain = -2.0 * (1.0 - alpha_bar_t).sqrt() / alpha_bar_t.sqrt();
    if reduction == Reduction::Mean {
        chain /= x0_hat.len() as f64;
    }
    x0_hat.zip_map(x_c, |a, b| chain * (a - b))
}

/// `ε̂ − λ_c·grad`.
pub fn refine_noise(eps_hat: &Latent, grad: &Latent, lambda_c: f64) -> Result<Latent> {
    if !(lambda_c >= 0.0 && lambda_c.is_finite()) {
        return Err(Error::param(format!(
            "lambda_c must be finite and >= 0, got {lambda_c}"
        )));
    }
    eps_hat.check_same_dims(grad, "refine noise")?;
    if lambda_c == 0.0 {
        return Ok(eps_hat.clone());
    }
    eps_hat.zip_map(grad, |e, g| e - lambda_c * g)
}

/// Deterministic DDIM update. `x̂0` is recomputed from the (refined) noise.
pub fn ddim_step(
    z_t: &Latent,
    eps: &Latent,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
) -> Result<Latent> {
    check_alpha_bar(alpha_bar_prev, "alpha_bar_prev")?;
    let x0 = estimate_x0(z_t, eps, alpha_bar_t)?;
    let signal = alpha_bar_prev.sqrt();
    let noise = (1.0 - alpha_bar_prev).sqrt();
    x0.zip_map(eps, |x, e| signal * x + noise * e)
}

/// Factor by which one refinement scales the residual `x̂0 − x_c`:
/// `1 − 2λ(1−ᾱ)/ᾱ` (sum) or `1 − 2λ(1−ᾱ)/(ᾱ·N)` (mean).
pub fn residual_contraction_factor(
    alpha_bar_t: f64,
    lambda_c: f64,
    reduction: Reduction,
    element_count: usize,
) -> Result<f64> {
    check_open_alpha_bar(alpha_bar_t)?;
    if !(lambda_c >= 0.0 && lambda_c.is_finite()) {
        return Err(Error::param(format!(
            "lambda_c must be finite and >= 0, got {lambda_c}"
        )));
    }
    let mut slope = 2.0 * (1.0 - alpha_bar_t) / alpha_bar_t;
    if reduction == Reduction::Mean {
        if element_count == 0 {
            return Err(Error::param("element_count must be positive in mean mode"));
        }
        slope /= element_count as f64;
    }
    // fused, so (0.25, 0.1) lands on the exact value at the stored inputs
    Ok((-slope).mul_add(lambda_c, 1.0))
}

/// λ at which the contraction factor reaches −1; refinement oscillates and
/// grows past it.
pub fn stability_bound(alpha_bar_t: f64, reduction: Reduction, element_count: usize) -> f64 {
    let odds = alpha_bar_t / (1.0 - alpha_bar_t);
    match reduction {
        Reduction::Sum => odds,
        Reduction::Mean => odds * element_count as f64,
    }
}

/// One guided noise refinement at a single step.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub eps_refined: Latent,
    /// Loss of the unrefined estimate.
    pub loss: f64,
}

/// Apply `cfg.iterations` refinements of ε̂ toward `x_c`.
pub fn refine_step(
    z_t: &Latent,
    eps_hat: &Latent,
    x_c: &Latent,
    alpha_bar_t: f64,
    cfg: &GuidanceConfig,
) -> Result<Refinement> {
    let lambda = cfg.effective_lambda(alpha_bar_t, z_t.len());
    let mut eps = eps_hat.clone();
    let mut first_loss = None;
    for _ in 0..cfg.iterations {
        let x0 = estimate_x0(z_t, &eps, alpha_bar_t)?;
        first_loss.get_or_insert(content_loss(&x0, x_c, cfg.reduction)?);
        let grad = content_loss_grad(&x0, x_c, alpha_bar_t, cfg.reduction)?;
        eps = refine_noise(&eps, &grad, lambda)?;
    }
    Ok(Refinement {
        eps_refined: eps,
        loss: first_loss.unwrap_or_default(),
    })
}
