//! Bonferroni and Benjamini–Hochberg corrections over a random number of
//! candidate peaks.
//!
//! All comparisons are strict: a candidate is rejected when its p-value is
//! *below* the cutoff.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Result, StemError};
use crate::palm::PalmParams;

/// A local maximum (or, for pointwise baselines, a single sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    #[serde(rename = "time")]
    pub location: f64,
    pub height: f64,
    pub pvalue: Option<f64>,
}

impl Candidate {
    pub fn new(index: usize, location: f64, height: f64) -> Self {
        Self {
            index,
            location,
            height,
            pvalue: None,
        }
    }
}

/// Candidates ordered by strictly increasing location.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(entries: Vec<Candidate>) -> Result<Self> {
        for w in entries.windows(2) {
            if !(w[1].location > w[0].location) {
                return Err(invalid("entries", "locations must be strictly increasing"));
            }
        }
        for c in &entries {
            if !c.height.is_finite() || !c.location.is_finite() {
                return Err(invalid("entries", format!("candidate {} is not finite", c.index)));
            }
            if let Some(p) = c.pvalue {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(invalid("entries", format!("p-value {p} outside (0, 1]")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub(crate) fn from_sorted(entries: Vec<Candidate>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Candidate> {
        self.entries
    }

    /// m̃
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn pvalues(&self) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|c| c.pvalue.ok_or(StemError::MissingPValue { index: c.index }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Bonferroni,
    #[serde(rename = "bh")]
    BenjaminiHochberg,
    PointwiseBonferroni,
    #[serde(rename = "pointwise_bh")]
    PointwiseBenjaminiHochberg,
    Supremum,
}

impl Procedure {
    pub const ALL: [Procedure; 5] = [
        Procedure::Bonferroni,
        Procedure::BenjaminiHochberg,
        Procedure::PointwiseBonferroni,
        Procedure::PointwiseBenjaminiHochberg,
        Procedure::Supremum,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Procedure::Bonferroni => "bonferroni",
            Procedure::BenjaminiHochberg => "bh",
            Procedure::PointwiseBonferroni => "pointwise_bonferroni",
            Procedure::PointwiseBenjaminiHochberg => "pointwise_bh",
            Procedure::Supremum => "supremum",
        }
    }

    /// Whether the procedure targets FDR (as opposed to FWER).
    pub fn controls_fdr(&self) -> bool {
        matches!(
            self,
            Procedure::BenjaminiHochberg | Procedure::PointwiseBenjaminiHochberg
        )
    }
}

/// Significant candidates and the thresholds that selected them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub procedure: Procedure,
    pub alpha: f64,
    /// Number of tested candidates.
    pub m_tilde: usize,
    /// Step-up index (BH procedures only, zero otherwise).
    pub k: usize,
    pub pvalue_cutoff: f64,
    /// Height above which candidates are significant; ±∞ when the cutoff is
    /// 1 or 0.
    #[serde(with = "extended_f64")]
    pub height_threshold: f64,
    pub rejected: Vec<Candidate>,
}

impl DetectionReport {
    pub fn rejection_count(&self) -> usize {
        self.rejected.len()
    }

    /// CSV of the rejected candidates: `index,time,height,pvalue`.
    pub fn rejected_csv(&self) -> String {
        let mut out = String::from("index,time,height,pvalue\n");
        for c in &self.rejected {
            let p = c.pvalue.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", c.index, c.location, c.height, p);
        }
        out
    }
}

/// Serialises infinite thresholds as the strings `"inf"` / `"-inf"`.
pub(crate) mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("unexpected threshold `{t}`"))),
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

/// `α/m`, or 1 when there is nothing to test.
pub fn bonferroni_cutoff(m: usize, alpha: f64) -> f64 {
    if m == 0 {
        1.0
    } else {
        alpha / m as f64
    }
}

/// Largest `i` (1-based) with `p_(i) < iα/m` among `pvalues`, or 0.
pub fn step_up_index(pvalues: &[f64], alpha: f64) -> usize {
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(i, p)| **p < (*i as f64 + 1.0) * alpha / m)
        .map_or(0, |(i, _)| i + 1)
}

/// `kα/m`, or 1 when there is nothing to test.
pub fn step_up_cutoff(m: usize, k: usize, alpha: f64) -> f64 {
    if m == 0 {
        1.0
    } else {
        k as f64 * alpha / m as f64
    }
}

/// Height equivalent of a p-value cutoff: +∞ for a zero cutoff, −∞ for one.
pub(crate) fn palm_height(params: &PalmParams, cutoff: f64) -> Result<f64> {
    if cutoff <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        params.quantile(cutoff.min(1.0))
    }
}

fn reject_below(candidates: &CandidateSet, pvalues: &[f64], cutoff: f64) -> Vec<Candidate> {
    candidates
        .entries()
        .iter()
        .zip(pvalues)
        .filter(|(_, p)| **p < cutoff)
        .map(|(c, _)| *c)
        .collect()
}

/// Rejects candidates with `p < α/m̃`.
pub fn bonferroni(
    candidates: &CandidateSet,
    alpha: f64,
    params: &PalmParams,
) -> Result<DetectionReport> {
    check_alpha(alpha)?;
    let pvalues = candidates.pvalues()?;
    let cutoff = bonferroni_cutoff(pvalues.len(), alpha);
    Ok(DetectionReport {
        procedure: Procedure::Bonferroni,
        alpha,
        m_tilde: pvalues.len(),
        k: 0,
        pvalue_cutoff: cutoff,
        height_threshold: palm_height(params, cutoff)?,
        rejected: reject_below(candidates, &pvalues, cutoff),
    })
}

/// Benjamini–Hochberg step-up: rejects the `k` smallest p-values where `k`
/// is the largest `i` with `p_(i) < iα/m̃`.
pub fn benjamini_hochberg(
    candidates: &CandidateSet,
    alpha: f64,
    params: &PalmParams,
) -> Result<DetectionReport> {
    check_alpha(alpha)?;
    let pvalues = candidates.pvalues()?;
    let k = step_up_index(&pvalues, alpha);
    let cutoff = step_up_cutoff(pvalues.len(), k, alpha);
    Ok(DetectionReport {
        procedure: Procedure::BenjaminiHochberg,
        alpha,
        m_tilde: pvalues.len(),
        k,
        pvalue_cutoff: cutoff,
        height_threshold: palm_height(params, cutoff)?,
        rejected: reject_below(candidates, &pvalues, cutoff),
    })
}

/// Deterministic thresholds the random Bonferroni and BH thresholds settle
/// to for long domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticThresholds {
    pub alpha: f64,
    /// Peaks per unit length (`J/L`).
    pub signal_density: f64,
    /// Expected local maxima of the noise per unit length.
    pub maxima_density: f64,
    pub u_bh: f64,
    params: PalmParams,
}

impl AsymptoticThresholds {
    /// Bonferroni threshold for a domain of length `length`; grows without
    /// bound in `length`.
    pub fn u_bon(&self, length: f64) -> Result<f64> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid("length", "must be positive"));
        }
        let v = (self.alpha / length) / (self.signal_density + self.maxima_density);
        palm_height(&self.params, v)
    }
}

pub fn asymptotic_thresholds(
    alpha: f64,
    signal_density: f64,
    maxima_density: f64,
    params: &PalmParams,
) -> Result<AsymptoticThresholds> {
    check_alpha(alpha)?;
    if !(signal_density > 0.0 && signal_density < 1.0) {
        return Err(invalid("signal_density", "must lie in (0, 1)"));
    }
    if !(maxima_density > 0.0 && maxima_density.is_finite()) {
        return Err(invalid("maxima_density", "must be positive"));
    }
    let v = alpha * signal_density / (signal_density + maxima_density * (1.0 - alpha));
    Ok(AsymptoticThresholds {
        alpha,
        signal_density,
        maxima_density,
        u_bh: palm_height(params, v)?,
        params: *params,
    })
}
