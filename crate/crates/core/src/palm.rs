//! Height distribution of a local maximum of smoothed stationary Gaussian
//! noise, conditional on the point being a local maximum.
//!
//! With moments `σ², λ2, λ4` and `Δ = σ²λ4 − λ2²`, the right tail is
//!
//! ```text
//! F(u) = 1 − Φ(u √(λ4/Δ)) + √(2π λ2² / (λ4 σ²)) φ(u/σ) Φ(u √(λ2² / (Δ σ²)))
//! ```
//!
//! `F` is used directly as the p-value of a maximum of height `u`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result, StemError};
use crate::multiple_testing::CandidateSet;
use crate::noise_model::NoiseMoments;
use crate::normal;

/// Smallest reported p-value; heights beyond ~38σ would otherwise give 0.
pub const MIN_PVALUE: f64 = f64::MIN_POSITIVE;

const QUANTILE_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmParams {
    moments: NoiseMoments,
    sigma: f64,
    delta: f64,
    /// √(λ4/Δ)
    tail_slope: f64,
    /// √(2π λ2² / (λ4 σ²))
    mix_weight: f64,
    /// √(λ2² / (Δ σ²))
    mix_slope: f64,
}

impl PalmParams {
    pub fn new(moments: NoiseMoments) -> Self {
        let sigma2 = moments.sigma2();
        let l2 = moments.lambda2();
        let l4 = moments.lambda4();
        let delta = moments.delta();
        Self {
            moments,
            sigma: sigma2.sqrt(),
            delta,
            tail_slope: (l4 / delta).sqrt(),
            mix_weight: (2.0 * PI * l2 * l2 / (l4 * sigma2)).sqrt(),
            mix_slope: (l2 * l2 / (delta * sigma2)).sqrt(),
        }
    }

    pub fn moments(&self) -> &NoiseMoments {
        &self.moments
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `F(u)` for finite `u`. Both terms are nonnegative, so nothing cancels
    /// in the upper tail; the lower tail is evaluated through `1 − F`.
    pub fn survival(&self, u: f64) -> f64 {
        let mix = self.mix_weight * normal::pdf(u / self.sigma) * normal::cdf(u * self.mix_slope);
        if u >= 0.0 {
            (normal::sf(u * self.tail_slope) + mix).min(1.0)
        } else {
            // 1 − F is the small quantity here.
            (1.0 - (normal::cdf(u * self.tail_slope) - mix)).clamp(0.0, 1.0)
        }
    }

    /// Inverse of [`survival`](Self::survival) for `v` in (0, 1]; `v = 1`
    /// returns −∞.
    pub fn quantile(&self, v: f64) -> Result<f64> {
        if !(v > 0.0 && v <= 1.0) {
            return Err(invalid("v", format!("must lie in (0, 1], got {v}")));
        }
        if v == 1.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lo = -10.0 * self.sigma;
        let mut step = 10.0 * self.sigma;
        while self.survival(lo) <= v {
            lo -= step;
            step *= 2.0;
            if !lo.is_finite() || lo < -1e6 * self.sigma {
                return Err(StemError::Numeric(format!(
                    "cannot bracket the quantile of {v} from below"
                )));
            }
        }
        let mut hi = 10.0 * self.sigma;
        let mut step = 10.0 * self.sigma;
        while self.survival(hi) > v {
            hi += step;
            step *= 2.0;
            if !hi.is_finite() || hi > 1e6 * self.sigma {
                return Err(StemError::Numeric(format!(
                    "cannot bracket the quantile of {v} from above"
                )));
            }
        }
        // survival(lo) > v >= survival(hi)
        for _ in 0..QUANTILE_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.survival(mid) > v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `F(u)`; errors on non-finite `u`.
pub fn palm_survival(params: &PalmParams, u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(invalid("u", format!("must be finite, got {u}")));
    }
    Ok(params.survival(u))
}

/// `F⁻¹(v)` by bracketed bisection.
pub fn palm_quantile(params: &PalmParams, v: f64) -> Result<f64> {
    params.quantile(v)
}

/// Expected number of local maxima per unit length, `(1/2π) √(λ4/λ2)`.
pub fn expected_maxima_density(moments: &NoiseMoments) -> f64 {
    (moments.lambda4() / moments.lambda2()).sqrt() / (2.0 * PI)
}

/// Attaches `F(height)` to every candidate, clamped below at [`MIN_PVALUE`].
pub fn candidate_pvalues(candidates: CandidateSet, params: &PalmParams) -> CandidateSet {
    let entries = candidates
        .into_entries()
        .into_iter()
        .map(|mut c| {
            c.pvalue = Some(params.survival(c.height).max(MIN_PVALUE));
            c
        })
        .collect();
    CandidateSet::from_sorted(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiple_testing::Candidate;
    use crate::noise_model::{closed_form_moments, GaussianAcvfParams};
    use proptest::prelude::*;

    fn gauss(xi: f64) -> PalmParams {
        PalmParams::new(closed_form_moments(&GaussianAcvfParams::new(1.0, 0.0).unwrap(), xi).unwrap())
    }

    #[test]
    fn value_at_zero_for_gaussian_model() {
        // λ2/√(λ4σ²) = 1/√3 for this model, so F(0) = 1/2 + 1/(2√3).
        let expected = 0.5 + 0.5 / 3f64.sqrt();
        assert!((expected - 0.788_675).abs() < 1e-6);
        for xi in [0.3, 1.0, 3.0, 11.0] {
            assert!((gauss(xi).survival(0.0) - expected).abs() < 1e-12);
        }
        let scaled = PalmParams::new(
            closed_form_moments(&GaussianAcvfParams::new(4.0, 1.0).unwrap(), 2.0).unwrap(),
        );
        assert!((scaled.survival(0.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn left_tail_and_non_finite_input() {
        let p = gauss(1.0);
        assert!(p.survival(-10.0 * p.sigma()) > 0.9999);
        assert!(palm_survival(&p, f64::NAN).is_err());
        assert!(palm_survival(&p, f64::INFINITY).is_err());
    }

    #[test]
    fn quantile_roundtrip() {
        let p = gauss(3.0);
        let s = p.sigma();
        for u0 in [-2.0 * s, 0.0, 2.0 * s, 5.0 * s] {
            let u = p.quantile(p.survival(u0)).unwrap();
            assert!((u - u0).abs() < 1e-8, "u0={u0} got {u}");
        }
        assert!(p.quantile(0.788_675).unwrap().abs() < 1e-5);
        assert_eq!(p.quantile(1.0).unwrap(), f64::NEG_INFINITY);
        assert!(p.quantile(0.0).is_err());
        assert!(p.quantile(1.5).is_err());
        assert!(p.quantile(-0.1).is_err());
    }

    #[test]
    fn deep_tail_quantiles() {
        let p = gauss(3.0);
        for v in [1e-3, 1e-7, 1e-12, 1e-30, 0.999_999] {
            let u = p.quantile(v).unwrap();
            assert!((p.survival(u) - v).abs() <= 1e-10, "v={v}");
            assert!((p.survival(u) / v - 1.0).abs() < 1e-8, "v={v}");
        }
    }

    #[test]
    fn maxima_density_reference() {
        let m = closed_form_moments(&GaussianAcvfParams::new(1.0, 0.0).unwrap(), 1.0).unwrap();
        let d = expected_maxima_density(&m);
        assert!((d - 1.5f64.sqrt() / (2.0 * PI)).abs() < 1e-14);
        assert!((d - 0.194_924).abs() < 1e-6);
        assert!((expected_maxima_density(&m.scaled(3.0).unwrap()) - d).abs() < 1e-15);
        let m2 = closed_form_moments(&GaussianAcvfParams::new(1.0, 0.0).unwrap(), 2.0).unwrap();
        assert!((expected_maxima_density(&m2) - d / 2.0).abs() < 1e-15);
    }

    #[test]
    fn candidate_pvalues_attach_and_order() {
        let p = gauss(2.0);
        assert!(candidate_pvalues(CandidateSet::default(), &p).is_empty());
        let set = CandidateSet::new(vec![
            Candidate::new(3, 3.0, 1.2),
            Candidate::new(9, 9.0, 0.4),
            Candidate::new(20, 20.0, 1e4),
        ])
        .unwrap();
        let out = candidate_pvalues(set, &p);
        let pv: Vec<f64> = out.entries().iter().map(|c| c.pvalue.unwrap()).collect();
        assert!(pv[0] < pv[1]);
        assert!(pv.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(pv[2], MIN_PVALUE);
    }

    proptest! {
        #[test]
        fn survival_is_a_valid_tail(xi in 0.2f64..20.0, nu_frac in 0.0f64..0.9, sigma in 0.1f64..10.0) {
            let nu = xi * nu_frac;
            let gamma = (xi * xi - nu * nu).sqrt();
            let p = PalmParams::new(
                closed_form_moments(&GaussianAcvfParams::new(sigma, nu).unwrap(), gamma).unwrap());
            let s = p.sigma();
            let grid: Vec<f64> = (0..1000).map(|i| -10.0 * s + 20.0 * s * i as f64 / 999.0).collect();
            let f: Vec<f64> = grid.iter().map(|&u| p.survival(u)).collect();
            for w in f.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!(f[0] > 0.9999);
            prop_assert!(f[999] < 1e-10);
            for (u, v) in grid.iter().zip(&f) {
                if *u >= 0.0 {
                    prop_assert!(*v >= normal::sf(u / s) - 1e-15);
                }
            }
        }

        #[test]
        fn survival_is_scale_equivariant(c in 0.1f64..20.0, u in -3.0f64..6.0, l2 in 0.1f64..1.0) {
            let m = NoiseMoments::new(1.0, l2, 2.0 * l2 * l2 + 0.05).unwrap();
            let a = PalmParams::new(m);
            let b = PalmParams::new(m.scaled(c).unwrap());
            prop_assert!((a.survival(u) - b.survival(c * u)).abs() < 1e-12);
        }

        #[test]
        fn quantile_is_decreasing(v1 in 1e-9f64..0.99, frac in 0.01f64..0.99) {
            let p = gauss(2.0);
            let v2 = v1 + (1.0 - v1) * frac;
            prop_assert!(p.quantile(v1).unwrap() > p.quantile(v2).unwrap());
        }
    }
}
