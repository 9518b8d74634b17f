//! Stationary Gaussian noise under the Gaussian-autocorrelation model: its
//! closed-form spectral moments, a seeded generator, and finite-difference
//! moment estimators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result, StemError};
use crate::grid_signal::SampledSequence;
use crate::normal;

/// Variances of the smoothed noise and of its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMoments", into = "RawMoments")]
pub struct NoiseMoments {
    sigma2: f64,
    lambda2: f64,
    lambda4: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMoments {
    sigma2: f64,
    lambda2: f64,
    lambda4: f64,
}

impl TryFrom<RawMoments> for NoiseMoments {
    type Error = StemError;
    fn try_from(raw: RawMoments) -> Result<Self> {
        NoiseMoments::new(raw.sigma2, raw.lambda2, raw.lambda4)
    }
}

impl From<NoiseMoments> for RawMoments {
    fn from(m: NoiseMoments) -> Self {
        RawMoments {
            sigma2: m.sigma2,
            lambda2: m.lambda2,
            lambda4: m.lambda4,
        }
    }
}

impl NoiseMoments {
    /// Requires all three moments positive and `σ²λ4 − λ2² > 0`.
    pub fn new(sigma2: f64, lambda2: f64, lambda4: f64) -> Result<Self> {
        for (name, v) in [("sigma2", sigma2), ("lambda2", lambda2), ("lambda4", lambda4)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        let m = Self {
            sigma2,
            lambda2,
            lambda4,
        };
        if !(m.delta() > 0.0) {
            return Err(invalid(
                "lambda4",
                format!("σ²λ4 − λ2² = {} is not positive", m.delta()),
            ));
        }
        Ok(m)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn lambda4(&self) -> f64 {
        self.lambda4
    }

    /// `Δ = σ²λ4 − λ2²`
    pub fn delta(&self) -> f64 {
        self.sigma2 * self.lambda4 - self.lambda2 * self.lambda2
    }

    /// Moments of the process multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let c2 = c * c;
        Self::new(self.sigma2 * c2, self.lambda2 * c2, self.lambda4 * c2)
    }

    /// Componentwise mean of several estimates.
    pub fn mean_of(all: &[NoiseMoments]) -> Result<Self> {
        if all.is_empty() {
            return Err(invalid("moments", "nothing to average"));
        }
        let n = all.len() as f64;
        Self::new(
            all.iter().map(|m| m.sigma2).sum::<f64>() / n,
            all.iter().map(|m| m.lambda2).sum::<f64>() / n,
            all.iter().map(|m| m.lambda4).sum::<f64>() / n,
        )
    }
}

/// `z(t) = σ ∫ (1/ν) φ((t − s)/ν) dB(s)`; `ν = 0` is white noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianAcvfParams {
    pub sigma: f64,
    pub nu: f64,
}

impl GaussianAcvfParams {
    pub fn new(sigma: f64, nu: f64) -> Result<Self> {
        let p = Self { sigma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(invalid("nu", format!("must be nonnegative, got {}", self.nu)));
        }
        Ok(())
    }

    /// `ξ = √(γ² + ν²)`
    pub fn xi(&self, gamma: f64) -> f64 {
        (gamma * gamma + self.nu * self.nu).sqrt()
    }

    /// Autocovariance of the noise smoothed by a Gaussian kernel of width γ.
    pub fn autocovariance(&self, gamma: f64, lag: f64) -> f64 {
        let xi = self.xi(gamma);
        self.sigma.powi(2) / (2.0 * PI.sqrt() * xi) * (-lag * lag / (4.0 * xi * xi)).exp()
    }
}

/// Spectral moments of the noise smoothed with a Gaussian kernel of width γ.
pub fn closed_form_moments(params: &GaussianAcvfParams, gamma: f64) -> Result<NoiseMoments> {
    params.validate()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", "must be nonnegative"));
    }
    let xi = params.xi(gamma);
    if xi == 0.0 {
        return Err(StemError::Degenerate(
            "white noise (ξ = 0) has no derivative moments".into(),
        ));
    }
    let s2 = params.sigma * params.sigma;
    let rp = PI.sqrt();
    NoiseMoments::new(
        s2 / (2.0 * rp * xi),
        s2 / (4.0 * rp * xi.powi(3)),
        3.0 * s2 / (8.0 * rp * xi.powi(5)),
    )
}

/// The generator behind every stochastic routine: ChaCha8 keyed by `seed`
/// on an independent `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Truncation of the stochastic-integral kernel, in units of ξ.
const NOISE_KERNEL_WIDTH: f64 = 6.0;

/// Seeded [`generate_noise_with`] on stream 0.
pub fn generate_noise(
    params: &GaussianAcvfParams,
    gamma: f64,
    length: usize,
    dt: f64,
    seed: u64,
) -> Result<SampledSequence> {
    generate_noise_with(params, gamma, length, dt, &mut stream_rng(seed, 0))
}

/// Samples `z_γ(t) = σ ∫ (1/ξ) φ((t − s)/ξ) dB(s)` at `t = i·dt`.
///
/// The integral is discretised as `σ Σ_k (1/ξ) φ((t − k·dt)/ξ) √dt ε_k` with
/// the kernel cut at ±6ξ. Extra innovations are drawn past both ends so the
/// whole output is stationary. When ξ = 0 the result is white noise with
/// per-sample variance σ²/dt, the sampled counterpart of `σ dB/dt`.
pub fn generate_noise_with<R: Rng + ?Sized>(
    params: &GaussianAcvfParams,
    gamma: f64,
    length: usize,
    dt: f64,
    rng: &mut R,
) -> Result<SampledSequence> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", "must be nonnegative"));
    }
    if length == 0 {
        return Err(invalid("length", "must be positive"));
    }
    let xi = params.xi(gamma);
    if xi == 0.0 {
        let scale = params.sigma / dt.sqrt();
        let values = (0..length)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        return SampledSequence::new(values, dt, 0.0);
    }
    let half = (NOISE_KERNEL_WIDTH * xi / dt).floor() as usize;
    let scale = params.sigma * dt.sqrt();
    let taps: Vec<f64> = (0..=2 * half)
        .map(|k| scale * normal::pdf((k as f64 - half as f64) * dt / xi) / xi)
        .collect();
    if length < taps.len() {
        return Err(invalid(
            "length",
            format!("{length} samples is shorter than the noise kernel ({})", taps.len()),
        ));
    }
    let eps: Vec<f64> = (0..length + taps.len() - 1)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let values = eps
        .windows(taps.len())
        .map(|w| w.iter().zip(&taps).map(|(e, g)| e * g).sum())
        .collect();
    SampledSequence::new(values, dt, 0.0)
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Empirical moments from the valid region of a smoothed noise sequence:
/// variances of the values, of the first forward differences / dt², and of
/// the second differences / dt⁴.
pub fn estimate_moments(smoothed_noise: &SampledSequence) -> Result<NoiseMoments> {
    let v = smoothed_noise.valid_values();
    if v.len() < 10 {
        return Err(invalid(
            "smoothed_noise",
            format!("need at least 10 valid samples, got {}", v.len()),
        ));
    }
    let dt = smoothed_noise.dt();
    let d1: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let d2: Vec<f64> = d1.windows(2).map(|w| w[1] - w[0]).collect();
    let sigma2 = sample_variance(v);
    let lambda2 = sample_variance(&d1) / dt.powi(2);
    let lambda4 = sample_variance(&d2) / dt.powi(4);
    if !(sigma2 > 0.0 && lambda2 > 0.0 && lambda4 > 0.0) {
        return Err(StemError::Degenerate(
            "input has zero variance; cannot estimate noise moments".into(),
        ));
    }
    NoiseMoments::new(sigma2, lambda2, lambda4)
        .map_err(|e| StemError::Degenerate(format!("estimated moments are inconsistent: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{convolve, gaussian_kernel};

    fn unit(nu: f64) -> GaussianAcvfParams {
        GaussianAcvfParams::new(1.0, nu).unwrap()
    }

    #[test]
    fn closed_form_reference_values() {
        let m = closed_form_moments(&unit(0.0), 1.0).unwrap();
        assert!((m.sigma2() - 0.282_095).abs() < 5e-7);
        assert!((m.lambda2() - 0.141_047).abs() < 5e-7);
        assert!((m.lambda4() - 0.211_571).abs() < 5e-7);
    }

    #[test]
    fn closed_form_delta() {
        for xi in [0.5, 1.0, 2.0, 7.5] {
            let m = closed_form_moments(&unit(0.0), xi).unwrap();
            let expected = 1.0 / (8.0 * PI * xi.powi(6));
            assert!((m.delta() / expected - 1.0).abs() < 1e-12);
        }
        // ν and γ only enter through ξ.
        let a = closed_form_moments(&unit(3.0), 4.0).unwrap();
        let b = closed_form_moments(&unit(0.0), 5.0).unwrap();
        assert!((a.sigma2() - b.sigma2()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_scales_with_sigma_squared() {
        let a = closed_form_moments(&GaussianAcvfParams::new(1.0, 0.5).unwrap(), 2.0).unwrap();
        let b = closed_form_moments(&GaussianAcvfParams::new(2.0, 0.5).unwrap(), 2.0).unwrap();
        assert!((b.sigma2() / a.sigma2() - 4.0).abs() < 1e-12);
        assert!((b.lambda2() / a.lambda2() - 4.0).abs() < 1e-12);
        assert!((b.lambda4() / a.lambda4() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn white_noise_has_no_closed_form() {
        assert!(matches!(
            closed_form_moments(&unit(0.0), 0.0),
            Err(StemError::Degenerate(_))
        ));
    }

    #[test]
    fn moments_validate() {
        assert!(NoiseMoments::new(1.0, 1.0, 1.0).is_err()); // Δ = 0
        assert!(NoiseMoments::new(-1.0, 1.0, 1.0).is_err());
        let json = r#"{"sigma2":1.0,"lambda2":0.5,"lambda4":1.0}"#;
        let m: NoiseMoments = serde_json::from_str(json).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), json);
        assert!(serde_json::from_str::<NoiseMoments>(r#"{"sigma2":1,"lambda2":1,"lambda4":1}"#)
            .is_err());
    }

    #[test]
    fn generated_variance_matches_closed_form() {
        let z = generate_noise(&unit(0.0), 3.0, 100_000, 1.0, 5).unwrap();
        let var = sample_variance(z.values());
        assert!((var / (1.0 / (6.0 * PI.sqrt())) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn generation_is_deterministic_and_linear_in_sigma() {
        let a = generate_noise(&unit(0.5), 1.0, 500, 0.5, 42).unwrap();
        let b = generate_noise(&unit(0.5), 1.0, 500, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_noise(&GaussianAcvfParams::new(2.0, 0.5).unwrap(), 1.0, 500, 0.5, 42)
            .unwrap();
        for (x, y) in a.values().iter().zip(c.values()) {
            assert_eq!(2.0 * x, *y);
        }
        let d = generate_noise(&unit(0.5), 1.0, 500, 0.5, 43).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn white_noise_generation() {
        let z = generate_noise(&unit(0.0), 0.0, 50_000, 1.0, 3).unwrap();
        assert!((sample_variance(z.values()) - 1.0).abs() < 0.03);
        let lag1: f64 = z.values().windows(2).map(|w| w[0] * w[1]).sum::<f64>() / 50_000.0;
        assert!(lag1.abs() < 0.02);
    }

    #[test]
    fn too_short_for_kernel() {
        assert!(generate_noise(&unit(0.0), 3.0, 20, 1.0, 1).is_err());
        assert!(generate_noise(&unit(0.0), 3.0, 37, 1.0, 1).is_ok());
    }

    /// Variances of the first and second differences of a sampled process
    /// with autocovariance `c`, at spacing `dt`.
    fn difference_variances(c: impl Fn(f64) -> f64, dt: f64) -> (f64, f64) {
        let d1 = 2.0 * (c(0.0) - c(dt));
        let d2 = 6.0 * c(0.0) - 8.0 * c(dt) + 2.0 * c(2.0 * dt);
        (d1 / dt.powi(2), d2 / dt.powi(4))
    }

    #[test]
    fn estimates_match_closed_form() {
        let p = unit(0.0);
        let z = generate_noise(&p, 3.0, 600_000, 1.0, 17).unwrap();
        let est = estimate_moments(&z).unwrap();
        let truth = closed_form_moments(&p, 3.0).unwrap();
        assert!((est.sigma2() / truth.sigma2() - 1.0).abs() < 0.03);
        assert!((est.lambda2() / truth.lambda2() - 1.0).abs() < 0.03);
        // At dt = 1 the second difference sees only ~95.5% of λ4; the exact
        // discrete target follows from the autocovariance.
        let (l2, l4) = difference_variances(|h| p.autocovariance(3.0, h), 1.0);
        assert!((l4 / truth.lambda4() - 0.955).abs() < 0.002);
        assert!((est.lambda2() / l2 - 1.0).abs() < 0.03);
        assert!((est.lambda4() / l4 - 1.0).abs() < 0.03);

        // On a finer grid the same estimator reaches the continuous moments.
        let z = generate_noise(&p, 3.0, 1_000_000, 0.2, 18).unwrap();
        let est = estimate_moments(&z).unwrap();
        assert!((est.sigma2() / truth.sigma2() - 1.0).abs() < 0.03);
        assert!((est.lambda2() / truth.lambda2() - 1.0).abs() < 0.03);
        assert!((est.lambda4() / truth.lambda4() - 1.0).abs() < 0.03);
    }

    #[test]
    fn estimates_scale_and_reject_constants() {
        let z = generate_noise(&unit(1.0), 1.0, 5000, 1.0, 2).unwrap();
        let a = estimate_moments(&z).unwrap();
        let b = estimate_moments(&z.scaled(3.0)).unwrap();
        assert!((b.sigma2() / a.sigma2() - 9.0).abs() < 1e-9);
        assert!((b.lambda2() / a.lambda2() - 9.0).abs() < 1e-9);
        assert!((b.lambda4() / a.lambda4() - 9.0).abs() < 1e-9);
        let flat = SampledSequence::new(vec![2.0; 100], 1.0, 0.0).unwrap();
        assert!(matches!(estimate_moments(&flat), Err(StemError::Degenerate(_))));
        let short = SampledSequence::new(vec![1.0, 2.0, 0.0], 1.0, 0.0).unwrap();
        assert!(estimate_moments(&short).is_err());
    }

    #[test]
    fn estimates_use_only_the_valid_region() {
        let w = generate_noise(&unit(0.0), 0.0, 20_000, 1.0, 9).unwrap();
        let y = convolve(&w, &gaussian_kernel(2.0, 3.0, 1.0).unwrap()).unwrap();
        let direct = estimate_moments(&y).unwrap();
        let (lo, hi) = (y.valid_range().start, y.valid_range().end);
        let trimmed = SampledSequence::new(y.values()[lo..hi].to_vec(), 1.0, 0.0).unwrap();
        assert_eq!(direct, estimate_moments(&trimmed).unwrap());
    }

    #[test]
    fn estimator_error_shrinks_with_length() {
        // Average absolute relative error over a few seeds, at two lengths.
        let truth = closed_form_moments(&unit(0.0), 2.0).unwrap();
        let err = |len: usize| -> f64 {
            (0..8)
                .map(|s| {
                    let z = generate_noise(&unit(0.0), 2.0, len, 0.5, 100 + s).unwrap();
                    let e = estimate_moments(&z).unwrap();
                    (e.sigma2() / truth.sigma2() - 1.0).abs()
                        + (e.lambda2() / truth.lambda2() - 1.0).abs()
                })
                .sum::<f64>()
        };
        assert!(err(100_000) < err(10_000));
    }

    #[test]
    fn empirical_autocovariance_matches_model() {
        let p = unit(1.0);
        let gamma = 1.5;
        let dt = 0.25;
        let n = 400_000;
        let z = generate_noise(&p, gamma, n, dt, 77).unwrap();
        let v = z.values();
        for lag_steps in [0usize, 4, 8, 16] {
            let acv: f64 = v
                .iter()
                .zip(&v[lag_steps..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (n - lag_steps) as f64;
            let lag = lag_steps as f64 * dt;
            // σ² ∫ g(s) g(s + τ) ds with g = (1/ξ) φ(·/ξ), midpoint rule.
            let xi = p.xi(gamma);
            let h = xi / 200.0;
            let model: f64 = (0..8000)
                .map(|i| {
                    let s = -20.0 * xi + (i as f64 + 0.5) * h;
                    normal::pdf(s / xi) * normal::pdf((s + lag) / xi) / (xi * xi) * h
                })
                .sum();
            assert!((model - p.autocovariance(gamma, lag)).abs() < 1e-10);
            let c0 = p.autocovariance(gamma, 0.0);
            assert!((acv - model).abs() < 0.03 * c0, "lag {lag_steps}: {acv} vs {model}");
        }
    }
}
