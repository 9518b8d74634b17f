//! Comparators that test every sample instead of local maxima: pointwise
//! Bonferroni and BH on `p(t) = 1 − Φ(y(t)/σ)`, and a global threshold from
//! an up-crossing bound on the supremum.
//!
//! All three report at peak level as well, through the local maxima whose
//! sample is significant, so they can be scored like the main procedure.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result, StemError};
use crate::grid_signal::SampledSequence;
use crate::multiple_testing::{
    bonferroni_cutoff, check_alpha, step_up_cutoff, step_up_index, Candidate, CandidateSet,
    DetectionReport, Procedure,
};
use crate::noise_model::NoiseMoments;
use crate::normal;
use crate::palm::MIN_PVALUE;

/// Samples in the valid region of `smoothed`, each with `p = 1 − Φ(y/σ)`.
pub fn pointwise_pvalues(smoothed: &SampledSequence, moments: &NoiseMoments) -> CandidateSet {
    let sigma = moments.sigma();
    let v = smoothed.values();
    let entries = smoothed
        .valid_range()
        .map(|i| {
            let mut c = Candidate::new(i, smoothed.time(i), v[i]);
            c.pvalue = Some(normal::sf(v[i] / sigma).max(MIN_PVALUE));
            c
        })
        .collect();
    CandidateSet::from_sorted(entries)
}

/// Bonferroni or BH over all samples, with `m` the number of samples.
/// `procedure` must be one of the pointwise variants.
pub fn pointwise_correct(
    samples: &CandidateSet,
    alpha: f64,
    procedure: Procedure,
    moments: &NoiseMoments,
) -> Result<DetectionReport> {
    check_alpha(alpha)?;
    let pvalues = samples
        .entries()
        .iter()
        .map(|c| c.pvalue.ok_or(StemError::MissingPValue { index: c.index }))
        .collect::<Result<Vec<f64>>>()?;
    let m = pvalues.len();
    let (k, cutoff) = match procedure {
        Procedure::PointwiseBonferroni => (0, bonferroni_cutoff(m, alpha)),
        Procedure::PointwiseBenjaminiHochberg => {
            let k = step_up_index(&pvalues, alpha);
            (k, step_up_cutoff(m, k, alpha))
        }
        other => {
            return Err(invalid(
                "procedure",
                format!("`{}` is not a pointwise procedure", other.name()),
            ))
        }
    };
    let height_threshold = if cutoff <= 0.0 {
        f64::INFINITY
    } else {
        moments.sigma() * normal::isf(cutoff.min(1.0))
    };
    let rejected = samples
        .entries()
        .iter()
        .zip(&pvalues)
        .filter(|(_, p)| **p < cutoff)
        .map(|(c, _)| *c)
        .collect();
    Ok(DetectionReport {
        procedure,
        alpha,
        m_tilde: m,
        k,
        pvalue_cutoff: cutoff,
        height_threshold,
        rejected,
    })
}

/// Local maxima whose sample index was rejected by a pointwise report.
pub fn significant_maxima(maxima: &CandidateSet, sample_report: &DetectionReport) -> Vec<Candidate> {
    maxima
        .entries()
        .iter()
        .filter(|c| {
            sample_report
                .rejected
                .binary_search_by_key(&c.index, |r| r.index)
                .is_ok()
        })
        .copied()
        .collect()
}

/// Constant in front of `L (√λ2/σ) φ(u/σ)` in the expected number of
/// up-crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiceConvention {
    /// `E[N_u] = L (√λ2/σ) φ(u/σ)`.
    #[default]
    Density,
    /// `E[N_u] = (L/2π)(√λ2/σ) exp(−u²/2σ²)`, smaller by `√(2π)`.
    Classical,
}

impl RiceConvention {
    fn factor(self) -> f64 {
        match self {
            RiceConvention::Density => 1.0,
            RiceConvention::Classical => 1.0 / (2.0 * PI).sqrt(),
        }
    }
}

/// `1 − Φ(u/σ) + E[N_u]`, the bound on `P(sup z ≥ u)` over a domain of
/// length `length`.
pub fn supremum_bound(moments: &NoiseMoments, length: f64, u: f64, convention: RiceConvention) -> f64 {
    let x = u / moments.sigma();
    let rate = length * moments.lambda2().sqrt() / moments.sigma() * convention.factor();
    normal::sf(x) + rate * normal::pdf(x)
}

const SUPREMUM_TOLERANCE: f64 = 1e-10;

/// Smallest `u` on the decreasing branch of [`supremum_bound`] where the
/// bound equals `alpha`.
pub fn supremum_threshold(
    moments: &NoiseMoments,
    length: f64,
    alpha: f64,
    convention: RiceConvention,
) -> Result<f64> {
    check_alpha(alpha)?;
    if !(length > 0.0 && length.is_finite()) {
        return Err(invalid("length", format!("must be positive, got {length}")));
    }
    let sigma = moments.sigma();
    let rate = length * moments.lambda2().sqrt() / sigma * convention.factor();
    let g = |x: f64| normal::sf(x) + rate * normal::pdf(x);
    // g' = −φ(x)(1 + rate·x), so g peaks at x = −1/rate, where it exceeds 1.
    let mut lo = -1.0 / rate;
    let mut hi = lo.max(0.0) + 1.0;
    while g(hi) > alpha {
        hi *= 2.0;
        if !hi.is_finite() || hi > 1e4 {
            return Err(StemError::Numeric(format!(
                "up-crossing bound stays above {alpha} for every threshold"
            )));
        }
    }
    while (hi - lo) * sigma > SUPREMUM_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi * sigma)
}

/// Local maxima above the supremum threshold for the valid region of
/// `smoothed`. `maxima` are the candidates found on that region.
pub fn supremum_detect(
    smoothed: &SampledSequence,
    maxima: &CandidateSet,
    moments: &NoiseMoments,
    alpha: f64,
    convention: RiceConvention,
) -> Result<DetectionReport> {
    let length = smoothed.valid_range().len() as f64 * smoothed.dt();
    let u = supremum_threshold(moments, length, alpha, convention)?;
    Ok(DetectionReport {
        procedure: Procedure::Supremum,
        alpha,
        m_tilde: maxima.len(),
        k: 0,
        pvalue_cutoff: alpha,
        height_threshold: u,
        rejected: maxima.entries().iter().filter(|c| c.height > u).copied().collect(),
    })
}
