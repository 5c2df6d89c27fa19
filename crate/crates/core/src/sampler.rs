//! Guided DDIM sampling and fixed-point DDIM inversion.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::denoise::NoisePredictor;
use crate::error::{Error, Result};
use crate::guidance::{ddim_step, refine_step, GuidanceConfig};
use crate::latent::Latent;
use crate::schedule::{NoiseSchedule, TimestepPlan};

#[derive(Debug, Clone, Default)]
pub struct SampleTrace {
    /// `z_T, …, z_0`; one more entry than there are steps.
    pub latents: Vec<Latent>,
    /// Content loss of the unrefined estimate at each step; empty when
    /// guidance is disabled.
    pub losses: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub alpha_bars: Vec<f64>,
}

impl SampleTrace {
    pub fn final_latent(&self) -> &Latent {
        self.latents
            .last()
            .expect("trace holds at least the start latent")
    }

    pub fn into_final(mut self) -> Latent {
        self.latents
            .pop()
            .expect("trace holds at least the start latent")
    }

    /// CSV with columns `step,t,alpha_bar,loss`; `loss` is empty without guidance.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,t,alpha_bar,loss")?;
        for (i, (t, ab)) in self.timesteps.iter().zip(&self.alpha_bars).enumerate() {
            match self.losses.get(i) {
                Some(loss) => writeln!(out, "{i},{t},{ab:e},{loss:e}")?,
                None => writeln!(out, "{i},{t},{ab:e},")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub steps: usize,
    /// Extra predictor evaluations per step at the provisional next latent.
    pub fixed_point_iters: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 6,
            fixed_point_iters: 2,
        }
    }
}

fn check_finite(z: &Latent, step: usize, t: usize) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            step,
            t,
            msg: "latent became non-finite".into(),
        })
    }
}

/// Run the guided denoising loop over `plan`, starting from `z_start`.
///
/// At each planned `t` the predicted noise is refined toward `x_c` (when
/// guidance is enabled) and a DDIM step moves to the next planned timestep;
/// the last step targets `ᾱ = 1`, so the final latent is the clean estimate.
pub fn sample<P: NoisePredictor + ?Sized>(
    z_start: &Latent,
    predictor: &P,
    schedule: &NoiseSchedule,
    plan: &TimestepPlan,
    x_c: &Latent,
    guidance: &GuidanceConfig,
) -> Result<SampleTrace> {
    guidance.validate()?;
    z_start.check_same_dims(x_c, "sample start vs content latent")?;
    let steps = plan.timesteps();

    let mut trace = SampleTrace {
        latents: Vec::with_capacity(steps.len() + 1),
        ..SampleTrace::default()
    };
    trace.latents.push(z_start.clone());
    let mut z = z_start.clone();

    for (i, &t) in steps.iter().enumerate() {
        let ab = schedule.alpha_bar(t)?;
        let ab_prev = match steps.get(i + 1) {
            Some(&next) => schedule.alpha_bar(next)?,
            None => 1.0,
        };

        let eps = predictor.predict(&z, t, schedule)?;
        eps.check_same_dims(&z, "predictor output")?;
        check_finite(&eps, i, t)?;

        let eps = if guidance.enabled {
            let r = refine_step(&z, &eps, x_c, ab, guidance)?;
            trace.losses.push(r.loss);
            r.eps_refined
        } else {
            eps
        };

        z = ddim_step(&z, &eps, ab, ab_prev)?;
        check_finite(&z, i, t)?;
        trace.timesteps.push(t);
        trace.alpha_bars.push(ab);
        trace.latents.push(z.clone());
    }
    Ok(trace)
}

/// Map a clean latent to a noisy one at the top of a `cfg.steps` plan so that
/// deterministic sampling approximately returns to it.
pub fn invert<P: NoisePredictor + ?Sized>(
    x_c: &Latent,
    predictor: &P,
    schedule: &NoiseSchedule,
    cfg: &InversionConfig,
) -> Result<Latent> {
    if cfg.steps == 0 {
        return Err(Error::param("inversion steps must be >= 1"));
    }
    let plan = schedule.plan(cfg.steps)?;
    invert_along(x_c, predictor, schedule, &plan, cfg.fixed_point_iters)
}

/// Inversion along an explicit plan, walked from its smallest timestep up.
///
/// Each step first predicts noise at the current latent, then re-predicts at
/// the provisional next latent `fixed_point_iters` times, converging toward
/// the latent whose DDIM step lands exactly on the current one.
pub fn invert_along<P: NoisePredictor + ?Sized>(
    x_c: &Latent,
    predictor: &P,
    schedule: &NoiseSchedule,
    plan: &TimestepPlan,
    fixed_point_iters: usize,
) -> Result<Latent> {
    if !x_c.is_finite() {
        return Err(Error::param("content latent is not finite"));
    }
    let mut z = x_c.clone();
    let mut ab_cur = 1.0;
    for (i, &t) in plan.timesteps().iter().rev().enumerate() {
        let ab_next = schedule.alpha_bar(t)?;
        // a clean latent has no timestep of its own; query at the target level
        let mut eps = predictor.predict(&z, t, schedule)?;
        let mut z_next = ddim_step(&z, &eps, ab_cur, ab_next)?;
        for _ in 0..fixed_point_iters {
            check_finite(&z_next, i, t)?;
            eps = predictor.predict(&z_next, t, schedule)?;
            z_next = ddim_step(&z, &eps, ab_cur, ab_next)?;
        }
        check_finite(&z_next, i, t)?;
        z = z_next;
        ab_cur = ab_next;
    }
    Ok(z)
}
