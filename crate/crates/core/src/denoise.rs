//! Noise predictors.
//!
//! Only analytic predictors ship here; they give exact answers the sampler
//! tests can check against. [`ExternalPredictor`] lets a real model run in a
//! separate process through a small file-exchange contract.

use std::cell::Cell;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::schedule::NoiseSchedule;

pub trait NoisePredictor {
    /// Predicted noise ε̂ for latent `z_t` at schedule index `t`.
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
        (**self).predict(z_t, t, schedule)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
        (**self).predict(z_t, t, schedule)
    }
}

fn eps_for_x0(z_t: &Latent, x0: &Latent, alpha_bar: f64) -> Result<Latent> {
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).sqrt();
    z_t.zip_map(x0, |z, x| (z - signal * x) / noise)
}

/// Data distribution concentrated on a single latent.
#[derive(Debug, Clone)]
pub struct PointMassPredictor {
    pub target: Latent,
}

impl PointMassPredictor {
    pub fn new(target: Latent) -> Self {
        Self { target }
    }
}

impl NoisePredictor for PointMassPredictor {
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
        let ab = schedule.alpha_bar(t)?;
        eps_for_x0(z_t, &self.target, ab)
    }
}

/// MSE-optimal predictor for an isotropic Gaussian prior `x0 ~ N(μ, σ²I)`.
#[derive(Debug, Clone)]
pub struct GaussianPriorPredictor {
    pub mu: Latent,
    pub sigma2: f64,
}

impl GaussianPriorPredictor {
    pub fn new(mu: Latent, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::param(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        Ok(Self { mu, sigma2 })
    }

    /// `E[x0 | z_t] = μ + √ᾱσ²/(ᾱσ² + 1 − ᾱ)·(z_t − √ᾱμ)`.
    pub fn posterior_mean(&self, z_t: &Latent, alpha_bar: f64) -> Result<Latent> {
        let signal = alpha_bar.sqrt();
        let gain = signal * self.sigma2 / (alpha_bar * self.sigma2 + 1.0 - alpha_bar);
        z_t.zip_map(&self.mu, |z, m| m + gain * (z - signal * m))
    }
}

impl NoisePredictor for GaussianPriorPredictor {
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
        let ab = schedule.alpha_bar(t)?;
        let mean = self.posterior_mean(z_t, ab)?;
        eps_for_x0(z_t, &mean, ab)
    }
}

/// Point mass at `(1−γ)·content + γ·style`; γ trades content for style.
#[derive(Debug, Clone)]
pub struct StylePullPredictor {
    inner: PointMassPredictor,
    gamma: f64,
}

impl StylePullPredictor {
    pub fn new(content_target: &Latent, style_target: &Latent, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::param(format!(
                "gamma must be in [0, 1], got {gamma}"
            )));
        }
        let target = content_target.zip_map(style_target, |c, s| (1.0 - gamma) * c + gamma * s)?;
        Ok(Self {
            inner: PointMassPredictor::new(target),
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn target(&self) -> &Latent {
        &self.inner.target
    }
}

impl NoisePredictor for StylePullPredictor {
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
        self.inner.predict(z_t, t, schedule)
    }
}

/// Wraps a predictor and counts calls.
#[derive(Debug)]
pub struct CountingPredictor<P> {
    inner: P,
    calls: Cell<usize>,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<P: NoisePredictor> NoisePredictor for CountingPredictor<P> {
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(z_t, t, schedule)
    }
}

// Tensor file: 12-byte header of three little-endian u32 dims (c, h, w),
// followed by c*h*w little-endian f64 values.

pub fn write_tensor<W: Write>(mut out: W, z: &Latent) -> std::io::Result<()> {
    let (c, h, w) = z.dims();
    for d in [c, h, w] {
        let d = u32::try_from(d).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "dim exceeds u32")
        })?;
        out.write_all(&d.to_le_bytes())?;
    }
    for v in z.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(bytes: &[u8], path: &Path) -> Result<Latent> {
    let format_err = |offset: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.to_string(),
    };
    if bytes.len() < 12 {
        return Err(format_err(bytes.len(), "truncated tensor header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let dims = (dim(0), dim(1), dim(2));
    let count = dims.0 * dims.1 * dims.2;
    let body = &bytes[12..];
    if body.len() != count * 8 {
        return Err(format_err(
            12 + body.len().min(count * 8),
            &format!("expected {count} f64 values, found {} bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Latent::new(dims, data)
}

pub fn save_tensor(path: &Path, z: &Latent) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_tensor(&mut out, z).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Latent> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_tensor(&bytes, path)
}

/// Runs `program [args..] <input> <t> <output>` once per prediction: `z_t` is
/// written to `<input>` and ε̂ is read back from `<output>`, both as tensor
/// files.
#[derive(Debug, Clone)]
pub struct ExternalPredictor {
    program: PathBuf,
    args: Vec<String>,
    workdir: PathBuf,
}

impl ExternalPredictor {
    pub fn new(
        program: impl Into<PathBuf>,
        args: Vec<String>,
        workdir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            program: program.into(),
            args,
            workdir: workdir.into(),
        }
    }
}

impl NoisePredictor for ExternalPredictor {
    fn predict(&self, z_t: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
        schedule.alpha_bar(t)?;
        let input = self.workdir.join(format!("z_{t}.bin"));
        let output = self.workdir.join(format!("eps_{t}.bin"));
        save_tensor(&input, z_t)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(t.to_string())
            .arg(&output)
            .status()
            .map_err(|e| Error::External(format!("{}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(Error::External(format!(
                "{} exited with {status} at t={t}",
                self.program.display()
            )));
        }
        let eps = load_tensor(&output)?;
        eps.check_same_dims(z_t, "external predictor output")?;
        Ok(eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::estimate_x0;
    use crate::schedule::BetaKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_latent(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Latent {
        let n = dims.0 * dims.1 * dims.2;
        Latent::new(dims, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn point_mass_estimate_recovers_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let schedule = NoiseSchedule::default();
        let target = random_latent(&mut rng, (2, 3, 3));
        let p = PointMassPredictor::new(target.clone());
        for t in [0, 17, 500, 999] {
            let z = random_latent(&mut rng, (2, 3, 3));
            let eps = p.predict(&z, t, &schedule).unwrap();
            let x0 = estimate_x0(&z, &eps, schedule.alpha_bar(t).unwrap()).unwrap();
            for (a, b) in x0.as_slice().iter().zip(target.as_slice()) {
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gaussian_small_variance_degenerates_to_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let schedule = NoiseSchedule::default();
        let mu = random_latent(&mut rng, (1, 4, 4));
        let g = GaussianPriorPredictor::new(mu.clone(), 1e-14).unwrap();
        let p = PointMassPredictor::new(mu);
        for t in [0, 250, 999] {
            let z = random_latent(&mut rng, (1, 4, 4));
            let a = g.predict(&z, t, &schedule).unwrap();
            let b = p.predict(&z, t, &schedule).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0));
            }
        }
    }

    /// Regress x0 on z over Monte-Carlo draws and compare the fitted line with
    /// the closed-form posterior mean.
    #[test]
    fn gaussian_posterior_mean_matches_monte_carlo_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mu, sigma2, ab) = (0.3_f64, 0.6_f64, 0.4_f64);
        let n = 1_000_000usize;
        let (mut sz, mut sx, mut szz, mut szx) = (0.0, 0.0, 0.0, 0.0);
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let x0 = mu + sigma2.sqrt() * u;
            let z = ab.sqrt() * x0 + (1.0 - ab).sqrt() * e;
            sz += z;
            sx += x0;
            szz += z * z;
            szx += z * x0;
            pairs.push((z, x0));
        }
        let nf = n as f64;
        let (mz, mx) = (sz / nf, sx / nf);
        let var_z = szz / nf - mz * mz;
        let slope = (szx / nf - mz * mx) / var_z;
        let intercept = mx - slope * mz;
        let resid_var = pairs
            .iter()
            .map(|(z, x)| (x - intercept - slope * z).powi(2))
            .sum::<f64>()
            / (nf - 2.0);
        let se_slope = (resid_var / (nf * var_z)).sqrt();
        let se_intercept = (resid_var * (1.0 / nf + mz * mz / (nf * var_z))).sqrt();

        // predicted line: E[x0|z] = (mu - gain*sqrt(ab)*mu) + gain*z
        let g = GaussianPriorPredictor::new(Latent::scalar(mu), sigma2).unwrap();
        let at0 = g
            .posterior_mean(&Latent::scalar(0.0), ab)
            .unwrap()
            .as_slice()[0];
        let at1 = g
            .posterior_mean(&Latent::scalar(1.0), ab)
            .unwrap()
            .as_slice()[0];
        let gain = at1 - at0;
        assert!(
            (slope - gain).abs() < 3.0 * se_slope,
            "slope {slope} vs {gain}"
        );
        assert!(
            (intercept - at0).abs() < 3.0 * se_intercept,
            "intercept {intercept} vs {at0}"
        );
    }

    #[test]
    fn predictions_are_deterministic() {
        let schedule = NoiseSchedule::new(50, 1e-3, 2e-2, BetaKind::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = random_latent(&mut rng, (1, 2, 3));
        let z = random_latent(&mut rng, (1, 2, 3));
        let g = GaussianPriorPredictor::new(mu, 0.5).unwrap();
        let a = g.predict(&z, 20, &schedule).unwrap();
        let b = g.predict(&z, 20, &schedule).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_timestep_is_index_error() {
        let schedule = NoiseSchedule::new(5, 1e-3, 2e-2, BetaKind::Linear).unwrap();
        let p = PointMassPredictor::new(Latent::scalar(0.0));
        assert!(matches!(
            p.predict(&Latent::scalar(1.0), 5, &schedule),
            Err(Error::Index { index: 5, len: 5 })
        ));
    }

    #[test]
    fn style_pull_targets_blend() {
        let c = Latent::scalar(1.0);
        let s = Latent::scalar(-1.0);
        let p = StylePullPredictor::new(&c, &s, 0.25).unwrap();
        assert_eq!(p.target().as_slice(), &[0.5]);
        assert!(StylePullPredictor::new(&c, &s, 1.5).is_err());
    }

    #[test]
    fn tensor_file_layout() {
        let z = Latent::new((1, 1, 2), vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &z).unwrap();
        assert_eq!(buf.len(), 12 + 16);
        assert_eq!(&buf[..12], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[12..20], &1.5f64.to_le_bytes());
        assert_eq!(read_tensor(&buf, Path::new("mem")).unwrap(), z);
        assert!(matches!(
            read_tensor(&buf[..20], Path::new("mem")),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            read_tensor(&buf[..7], Path::new("mem")),
            Err(Error::Format { offset: 7, .. })
        ));
    }
}
