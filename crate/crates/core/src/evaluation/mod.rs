//! Peak-level scoring of a detection run, the approximate power formula and
//! the signal-to-noise ratio it is built on.

mod harness;

pub use harness::{
    preset, run_sweep, AmplitudeAxis, CellKey, KernelSpec, MomentSource, NoiseSpec, SimulationDesign,
    SweepCell, SweepResult, Tally, PRESET_NAMES,
};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::grid_signal::{PeakSpec, Region, RegionSet};
use crate::kernels::Kernel;
use crate::multiple_testing::{Candidate, CandidateSet};
use crate::noise_model::NoiseMoments;
use crate::normal;

/// Counts from one replication. A rejection outside every true support is
/// false, including those in the transition region.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// False rejections.
    pub v: usize,
    /// Rejections inside the signal region.
    pub w: usize,
    pub r: usize,
    /// The part of `v` that fell in the transition region.
    pub transition: usize,
    /// Per peak: at least one rejection inside its support.
    pub detected_flags: Vec<bool>,
    /// Per peak: number of tested local maxima inside its support.
    pub locmax_per_peak: Vec<usize>,
}

impl TrialOutcome {
    /// `V / (R ∨ 1)`
    pub fn fdp(&self) -> f64 {
        self.v as f64 / self.r.max(1) as f64
    }

    /// Fraction of true peaks detected.
    pub fn power(&self) -> f64 {
        if self.detected_flags.is_empty() {
            0.0
        } else {
            self.detected_flags.iter().filter(|&&d| d).count() as f64 / self.detected_flags.len() as f64
        }
    }

    pub fn mean_locmax_per_peak(&self) -> f64 {
        if self.locmax_per_peak.is_empty() {
            0.0
        } else {
            self.locmax_per_peak.iter().sum::<usize>() as f64 / self.locmax_per_peak.len() as f64
        }
    }
}

/// Classifies `rejected` against the true supports in `regions`;
/// `candidates` are all tested maxima.
pub fn score_trial(rejected: &[Candidate], candidates: &CandidateSet, regions: &RegionSet) -> TrialOutcome {
    let j = regions.peak_supports.len();
    let mut out = TrialOutcome {
        r: rejected.len(),
        detected_flags: vec![false; j],
        locmax_per_peak: vec![0; j],
        ..TrialOutcome::default()
    };
    for c in rejected {
        match regions.classify(c.location) {
            Region::Signal => {
                out.w += 1;
                for p in regions.peaks_containing(c.location) {
                    out.detected_flags[p] = true;
                }
            }
            Region::Transition => {
                out.v += 1;
                out.transition += 1;
            }
            Region::Null => out.v += 1,
        }
    }
    for c in candidates.entries() {
        for p in regions.peaks_containing(c.location) {
            out.locmax_per_peak[p] += 1;
        }
    }
    out
}

/// `a·h_γ(τ)`: the peak smoothed by `kernel`, evaluated at its center.
pub fn smoothed_peak_height(peak: &PeakSpec, kernel: &Kernel) -> f64 {
    let dt = kernel.dt();
    let c = kernel.center() as f64;
    kernel
        .weights()
        .iter()
        .enumerate()
        .map(|(k, w)| w * peak.eval(peak.center + (c - k as f64) * dt))
        .sum::<f64>()
        * dt
}

/// `Φ((a·h_γ(τ) − u)/σ_γ)`, the probability that the smoothed data at the
/// peak center exceed `u`.
pub fn theoretical_power(peak: &PeakSpec, kernel: &Kernel, moments: &NoiseMoments, u: f64) -> f64 {
    if u == f64::NEG_INFINITY {
        return 1.0;
    }
    if u == f64::INFINITY {
        return 0.0;
    }
    normal::cdf((smoothed_peak_height(peak, kernel) - u) / moments.sigma())
}

/// Signal-to-noise ratio of a Gaussian peak of width `b` under a Gaussian
/// kernel of width γ, with noise of scale `nu`, ignoring truncation.
pub fn snr(a: f64, sigma: f64, b: f64, nu: f64, gamma: f64) -> Result<f64> {
    if !(a > 0.0 && sigma > 0.0 && b > 0.0 && nu >= 0.0 && gamma >= 0.0) {
        return Err(invalid("snr", "a, σ, b must be positive and ν, γ nonnegative"));
    }
    let s2 = gamma * gamma + nu * nu;
    if s2 == 0.0 {
        return Err(invalid("gamma", "γ² + ν² must be positive"));
    }
    let d = gamma * gamma + b * b;
    Ok(a / (sigma * PI.powf(0.25)) * (s2 / (d * d)).powf(0.25))
}

/// `a·h_γ(τ)/σ_γ` for any peak and kernel, by direct summation.
pub fn snr_general(peak: &PeakSpec, kernel: &Kernel, moments: &NoiseMoments) -> f64 {
    smoothed_peak_height(peak, kernel) / moments.sigma()
}

/// Bandwidth maximising [`snr`]: `√(b² − 2ν²)` when `ν < b/√2`, else 0.
pub fn optimal_bandwidth(b: f64, nu: f64) -> f64 {
    let d = b * b - 2.0 * nu * nu;
    if d > 0.0 {
        d.sqrt()
    } else {
        0.0
    }
}
