//! The detection pipeline: smooth, collect local maxima, attach p-values and
//! correct for multiplicity. Plus bandwidth selection by discovery count.

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{invalid, Result};
use crate::grid_signal::SampledSequence;
use crate::kernels::{convolve, Kernel};
use crate::multiple_testing::{benjamini_hochberg, bonferroni, Candidate, CandidateSet, DetectionReport};
use crate::noise_model::NoiseMoments;
use crate::palm::{candidate_pvalues, PalmParams};

/// Correction applied to the local-maxima p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemProcedure {
    Bonferroni,
    #[serde(rename = "bh")]
    BenjaminiHochberg,
}

/// Samples strictly higher than both neighbours, with `margin` samples
/// ignored at each end. Plateaus never count.
pub fn find_local_maxima(seq: &SampledSequence, margin: usize) -> CandidateSet {
    let hi = seq.len().saturating_sub(margin);
    local_maxima_in(seq, margin..hi)
}

/// Local maxima with indices inside `range`.
pub fn local_maxima_in(seq: &SampledSequence, range: Range<usize>) -> CandidateSet {
    let v = seq.values();
    let lo = range.start.max(1);
    let hi = range.end.min(v.len().saturating_sub(1));
    let entries = (lo..hi.max(lo))
        .filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1])
        .map(|i| Candidate::new(i, seq.time(i), v[i]))
        .collect();
    CandidateSet::from_sorted(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemOutput {
    pub report: DetectionReport,
    pub smoothed: SampledSequence,
    /// All tested local maxima, with p-values.
    pub candidates: CandidateSet,
}

/// Runs the four steps on `raw`. `moments` must describe the noise after
/// smoothing with `kernel`. Maxima inside the zero-padding margin are not
/// tested.
pub fn stem_detect(
    raw: &SampledSequence,
    kernel: &Kernel,
    moments: &NoiseMoments,
    procedure: StemProcedure,
    alpha: f64,
) -> Result<StemOutput> {
    let smoothed = convolve(raw, kernel)?;
    let params = PalmParams::new(*moments);
    let candidates = candidate_pvalues(local_maxima_in(&smoothed, smoothed.valid_range()), &params);
    let report = match procedure {
        StemProcedure::Bonferroni => bonferroni(&candidates, alpha, &params)?,
        StemProcedure::BenjaminiHochberg => benjamini_hochberg(&candidates, alpha, &params)?,
    };
    Ok(StemOutput {
        report,
        smoothed,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoBandwidth {
    pub chosen_index: usize,
    pub output: StemOutput,
}

/// Runs [`stem_detect`] for every kernel and keeps the one with the most
/// rejections; ties go to the smallest bandwidth, then the earliest entry.
pub fn auto_bandwidth(
    raw: &SampledSequence,
    kernels: &[Kernel],
    moments_per_kernel: &[NoiseMoments],
    procedure: StemProcedure,
    alpha: f64,
) -> Result<AutoBandwidth> {
    if kernels.is_empty() {
        return Err(invalid("kernels", "need at least one kernel"));
    }
    if kernels.len() != moments_per_kernel.len() {
        return Err(invalid(
            "moments_per_kernel",
            format!("{} moments for {} kernels", moments_per_kernel.len(), kernels.len()),
        ));
    }
    let mut best: Option<AutoBandwidth> = None;
    for (i, (kernel, moments)) in kernels.iter().zip(moments_per_kernel).enumerate() {
        let output = stem_detect(raw, kernel, moments, procedure, alpha)?;
        let better = match &best {
            None => true,
            Some(b) => {
                let (n, bn) = (output.report.rejected.len(), b.output.report.rejected.len());
                n > bn || (n == bn && kernel.bandwidth() < kernels[b.chosen_index].bandwidth())
            }
        };
        if better {
            best = Some(AutoBandwidth {
                chosen_index: i,
                output,
            });
        }
    }
    Ok(best.expect("kernels is non-empty"))
}
