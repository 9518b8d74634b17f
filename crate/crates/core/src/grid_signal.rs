//! Uniformly sampled sequences, synthetic peak trains and the signal / null
//! region bookkeeping used to score detections.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{invalid, Result, StemError};
use crate::kernels::Kernel;
use crate::normal;

/// A real-valued series sampled on the grid `t0 + i·dt`.
///
/// Smoothing records how many samples at each end are contaminated by the
/// zero-padded boundary; downstream consumers only look inside
/// [`valid_range`](Self::valid_range).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    values: Vec<f64>,
    dt: f64,
    t0: f64,
    margin_left: usize,
    margin_right: usize,
}

impl SampledSequence {
    pub fn new(values: Vec<f64>, dt: f64, t0: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("values", "sequence must be non-empty"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive and finite, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("sample {i} is not finite")));
        }
        Ok(Self {
            values,
            dt,
            t0,
            margin_left: 0,
            margin_right: 0,
        })
    }

    /// Marks `left` and `right` samples at the ends as outside the valid region.
    pub fn with_margins(mut self, left: usize, right: usize) -> Self {
        self.margin_left = left;
        self.margin_right = right;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn margins(&self) -> (usize, usize) {
        (self.margin_left, self.margin_right)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Span `(len − 1)·dt` covered by the samples.
    pub fn span(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// Indices not affected by boundary padding. Empty when the margins
    /// swallow the whole sequence.
    pub fn valid_range(&self) -> Range<usize> {
        let lo = self.margin_left.min(self.values.len());
        let hi = self.values.len().saturating_sub(self.margin_right).max(lo);
        lo..hi
    }

    pub fn valid_values(&self) -> &[f64] {
        &self.values[self.valid_range()]
    }

    /// Same grid, values multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Pointwise sum of two sequences on the same grid (margins are merged).
    pub fn add(&self, other: &SampledSequence) -> Result<Self> {
        if self.len() != other.len() {
            return Err(invalid(
                "other",
                format!("length {} differs from {}", other.len(), self.len()),
            ));
        }
        if !same_spacing(self.dt, other.dt) {
            return Err(StemError::GridMismatch {
                sequence: self.dt,
                kernel: other.dt,
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            values,
            dt: self.dt,
            t0: self.t0,
            margin_left: self.margin_left.max(other.margin_left),
            margin_right: self.margin_right.max(other.margin_right),
        })
    }
}

pub(crate) fn same_spacing(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Unimodal peak profiles, centred at zero.
///
/// Truncated shapes are not renormalised after truncation, so their mass is
/// slightly below one (noticeably so for the heavy-tailed Cauchy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PeakShape {
    /// `(1/b) φ(t/b)` on `[−cb, cb]`.
    TruncGaussian { b: f64, c: f64 },
    /// `3/(4w) (1 − (t/w)²)` on `[−w, w]`.
    Epanechnikov { halfwidth: f64 },
    /// `(1/w) (1 − |t|/w)` on `[−w, w]`.
    Triangular { halfwidth: f64 },
    /// `(1/2b) exp(−|t|/b)` on `[−cb, cb]`.
    Laplace { b: f64, c: f64 },
    /// `1 / (πb (1 + (t/b)²))` on `[−cb, cb]`.
    Cauchy { b: f64, c: f64 },
    /// Nonnegative profile sampled at `(i − center)·dt`, linearly interpolated
    /// and zero beyond the samples.
    Custom {
        dt: f64,
        center: usize,
        values: Vec<f64>,
    },
}

impl PeakShape {
    fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        match self {
            PeakShape::TruncGaussian { b, c }
            | PeakShape::Laplace { b, c }
            | PeakShape::Cauchy { b, c } => {
                positive("b", *b)?;
                positive("c", *c)
            }
            PeakShape::Epanechnikov { halfwidth } | PeakShape::Triangular { halfwidth } => {
                positive("halfwidth", *halfwidth)
            }
            PeakShape::Custom { dt, center, values } => {
                positive("dt", *dt)?;
                if *center >= values.len() {
                    return Err(invalid("center", "outside the sampled profile"));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(invalid("values", "profile must be finite and nonnegative"));
                }
                if !values.iter().any(|v| *v > 0.0) {
                    return Err(invalid("values", "profile is identically zero"));
                }
                Ok(())
            }
        }
    }

    /// Closed support `[lo, hi]` relative to the peak centre.
    pub fn support(&self) -> (f64, f64) {
        match self {
            PeakShape::TruncGaussian { b, c }
            | PeakShape::Laplace { b, c }
            | PeakShape::Cauchy { b, c } => (-c * b, c * b),
            PeakShape::Epanechnikov { halfwidth } | PeakShape::Triangular { halfwidth } => {
                (-halfwidth, *halfwidth)
            }
            PeakShape::Custom { dt, center, values } => {
                let first = values.iter().position(|v| *v > 0.0).unwrap_or(0);
                let last = values.iter().rposition(|v| *v > 0.0).unwrap_or(0);
                let c = *center as f64;
                ((first as f64 - 1.0 - c) * dt, (last as f64 + 1.0 - c) * dt)
            }
        }
    }

    /// Profile value at offset `t` from the centre.
    pub fn eval(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t < lo || t > hi {
            return 0.0;
        }
        match self {
            PeakShape::TruncGaussian { b, .. } => normal::pdf(t / b) / b,
            PeakShape::Epanechnikov { halfwidth: w } => 0.75 / w * (1.0 - (t / w).powi(2)),
            PeakShape::Triangular { halfwidth: w } => (1.0 - t.abs() / w) / w,
            PeakShape::Laplace { b, .. } => (-t.abs() / b).exp() / (2.0 * b),
            PeakShape::Cauchy { b, .. } => 1.0 / (PI * b * (1.0 + (t / b).powi(2))),
            PeakShape::Custom { dt, center, values } => {
                let x = t / dt + *center as f64;
                let i = x.floor();
                let frac = x - i;
                let at = |k: f64| {
                    if k < 0.0 || k >= values.len() as f64 {
                        0.0
                    } else {
                        values[k as usize]
                    }
                };
                at(i) * (1.0 - frac) + at(i + 1.0) * frac
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSpec {
    #[serde(flatten)]
    pub shape: PeakShape,
    pub amplitude: f64,
    pub center: f64,
}

impl PeakSpec {
    pub fn new(shape: PeakShape, amplitude: f64, center: f64) -> Result<Self> {
        let peak = Self {
            shape,
            amplitude,
            center,
        };
        peak.validate()?;
        Ok(peak)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(invalid("amplitude", format!("must be positive, got {}", self.amplitude)));
        }
        if !self.center.is_finite() {
            return Err(invalid("center", "must be finite"));
        }
        Ok(())
    }

    /// `a_j h_j(t − τ_j)`
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * self.shape.eval(t - self.center)
    }

    /// Closed support in absolute time.
    pub fn support(&self) -> Interval {
        let (lo, hi) = self.shape.support();
        Interval::closed(self.center + lo, self.center + hi)
    }
}

/// A train of peaks on `[−L/2, L/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub peaks: Vec<PeakSpec>,
    pub domain_length: f64,
}

impl SignalSpec {
    pub fn new(peaks: Vec<PeakSpec>, domain_length: f64) -> Result<Self> {
        let spec = Self {
            peaks,
            domain_length,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return Err(invalid("domain_length", "must be positive and finite"));
        }
        let domain = self.domain();
        for (j, peak) in self.peaks.iter().enumerate() {
            peak.validate()?;
            let s = peak.support();
            if s.lo < domain.lo - 1e-9 || s.hi > domain.hi + 1e-9 {
                return Err(invalid(
                    "peaks",
                    format!("support of peak {j} [{}, {}] leaves the domain", s.lo, s.hi),
                ));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Interval {
        Interval::closed(-self.domain_length / 2.0, self.domain_length / 2.0)
    }

    /// Number of grid samples covering the domain at spacing `dt`.
    pub fn grid_len(&self, dt: f64) -> usize {
        (self.domain_length / dt + 1e-9).floor() as usize + 1
    }
}

/// Samples `μ(t) = Σ a_j h_j(t − τ_j)` on the grid `−L/2 + i·dt`.
pub fn synthesize_signal(spec: &SignalSpec, dt: f64) -> Result<SampledSequence> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    spec.validate()?;
    for (j, peak) in spec.peaks.iter().enumerate() {
        let s = peak.support();
        if dt >= s.hi - s.lo {
            return Err(invalid(
                "dt",
                format!("grid spacing {dt} is not smaller than the support of peak {j}"),
            ));
        }
    }
    let t0 = -spec.domain_length / 2.0;
    let n = spec.grid_len(dt);
    let values = (0..n)
        .map(|i| {
            let t = t0 + i as f64 * dt;
            spec.peaks.iter().map(|p| p.eval(t)).sum()
        })
        .collect();
    SampledSequence::new(values, dt, t0)
}

/// An interval of the real line with independently open or closed ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn contains(&self, t: f64) -> bool {
        let above = if self.lo_closed { t >= self.lo } else { t > self.lo };
        let below = if self.hi_closed { t <= self.hi } else { t < self.hi };
        above && below
    }

    pub fn length(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }

    /// `self \ other`, as at most two pieces.
    fn subtract(&self, other: &Interval) -> Vec<Interval> {
        if other.is_empty() || self.intersect(other).is_empty() {
            return vec![*self];
        }
        let left = Interval {
            lo: self.lo,
            lo_closed: self.lo_closed,
            hi: other.lo,
            hi_closed: !other.lo_closed,
        };
        let right = Interval {
            lo: other.hi,
            lo_closed: !other.hi_closed,
            hi: self.hi,
            hi_closed: self.hi_closed,
        };
        [left.intersect(self), right.intersect(self)]
            .into_iter()
            .filter(|i| !i.is_empty())
            .collect()
    }
}

/// A finite union of disjoint intervals, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<Interval>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Union of arbitrary (possibly overlapping) intervals.
    pub fn union_of(mut pieces: Vec<Interval>) -> Self {
        pieces.retain(|i| !i.is_empty());
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(b.lo_closed.cmp(&a.lo_closed)));
        let mut merged: Vec<Interval> = Vec::with_capacity(pieces.len());
        for piece in pieces {
            if let Some(last) = merged.last_mut() {
                let touches = piece.lo < last.hi
                    || (piece.lo == last.hi && (piece.lo_closed || last.hi_closed));
                if touches {
                    if piece.hi > last.hi {
                        last.hi = piece.hi;
                        last.hi_closed = piece.hi_closed;
                    } else if piece.hi == last.hi {
                        last.hi_closed |= piece.hi_closed;
                    }
                    continue;
                }
            }
            merged.push(piece);
        }
        Self { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(t))
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(Interval::length).sum()
    }

    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        let mut pieces = self.intervals.clone();
        for cut in &other.intervals {
            pieces = pieces.iter().flat_map(|p| p.subtract(cut)).collect();
        }
        Self::union_of(pieces)
    }

    pub fn intersect_interval(&self, window: &Interval) -> IntervalSet {
        Self::union_of(self.intervals.iter().map(|i| i.intersect(window)).collect())
    }
}

/// Which part of the domain a time point falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Inside the support of a true peak.
    Signal,
    /// Inside a smoothed support but outside every true support.
    Transition,
    /// Outside every smoothed support.
    Null,
}

/// Signal, null and transition regions of a signal spec under a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub domain: Interval,
    /// Per-peak true supports `S_j`, in spec order.
    pub peak_supports: Vec<Interval>,
    /// Per-peak smoothed supports `S_{j,γ}`, in spec order.
    pub smoothed_supports: Vec<Interval>,
    pub signal: IntervalSet,
    pub null: IntervalSet,
    pub smoothed_signal: IntervalSet,
    pub smoothed_null: IntervalSet,
    pub transition: IntervalSet,
}

impl RegionSet {
    pub fn classify(&self, t: f64) -> Region {
        if self.signal.contains(t) {
            Region::Signal
        } else if self.smoothed_signal.contains(t) {
            Region::Transition
        } else {
            Region::Null
        }
    }

    /// Indices of the peaks whose true support contains `t`.
    pub fn peaks_containing(&self, t: f64) -> impl Iterator<Item = usize> + '_ {
        self.peak_supports
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.contains(t))
            .map(|(j, _)| j)
    }
}

/// Builds the region bookkeeping for `spec` smoothed by `kernel`.
///
/// Each true support is dilated by the kernel's extent on either side of its
/// origin, then everything is clipped to the domain.
pub fn compute_regions(spec: &SignalSpec, kernel: &Kernel) -> RegionSet {
    let domain = spec.domain();
    let (left, right) = kernel.extent();
    let peak_supports: Vec<Interval> = spec.peaks.iter().map(PeakSpec::support).collect();
    let smoothed_supports: Vec<Interval> = peak_supports
        .iter()
        .map(|s| Interval::closed(s.lo - left, s.hi + right).intersect(&domain))
        .collect();
    let whole = IntervalSet::union_of(vec![domain]);
    let signal = IntervalSet::union_of(peak_supports.clone()).intersect_interval(&domain);
    let smoothed_signal = IntervalSet::union_of(smoothed_supports.clone());
    let null = whole.difference(&signal);
    let smoothed_null = whole.difference(&smoothed_signal);
    let transition = smoothed_signal.difference(&signal);
    RegionSet {
        domain,
        peak_supports,
        smoothed_supports,
        signal,
        null,
        smoothed_signal,
        smoothed_null,
        transition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gaussian_kernel;
    use proptest::prelude::*;

    fn gauss_peak(a: f64, center: f64) -> PeakSpec {
        PeakSpec::new(PeakShape::TruncGaussian { b: 3.0, c: 3.0 }, a, center).unwrap()
    }

    #[test]
    fn empty_spec_gives_zero_sequence() {
        let spec = SignalSpec::new(vec![], 10.0).unwrap();
        let mu = synthesize_signal(&spec, 1.0).unwrap();
        assert_eq!(mu.len(), 11);
        assert!(mu.values().iter().all(|v| *v == 0.0));
        assert_eq!(mu.time(0), -5.0);
    }

    #[test]
    fn truncated_gaussian_height_at_mode() {
        let spec = SignalSpec::new(vec![gauss_peak(15.0, 0.0)], 100.0).unwrap();
        let mu = synthesize_signal(&spec, 1.0).unwrap();
        let mid = mu.values()[50];
        assert!((mid - 5.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((mid - 1.9947).abs() < 1e-4);
    }

    #[test]
    fn disjoint_unit_peaks_integrate_to_total_amplitude() {
        // Trapezoidal quadrature of the sampled train.
        let shape = PeakShape::Triangular { halfwidth: 5.0 };
        let spec = SignalSpec::new(
            vec![
                PeakSpec::new(shape.clone(), 1.0, -20.0).unwrap(),
                PeakSpec::new(shape, 1.0, 20.0).unwrap(),
            ],
            100.0,
        )
        .unwrap();
        let dt = 10.0 / 100.0;
        let mu = synthesize_signal(&spec, dt).unwrap();
        let v = mu.values();
        let integral: f64 = v.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
        assert!((integral - 2.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn rejects_bad_dt_and_escaping_peaks() {
        let spec = SignalSpec::new(vec![gauss_peak(1.0, 0.0)], 100.0).unwrap();
        assert!(synthesize_signal(&spec, 0.0).is_err());
        assert!(synthesize_signal(&spec, -1.0).is_err());
        assert!(SignalSpec::new(vec![gauss_peak(1.0, 48.0)], 100.0).is_err());
        assert!(PeakSpec::new(PeakShape::Epanechnikov { halfwidth: 2.0 }, 0.0, 0.0).is_err());
    }

    #[test]
    fn overlapping_peaks_add() {
        let shape = PeakShape::Epanechnikov { halfwidth: 10.0 };
        let a = PeakSpec::new(shape.clone(), 2.0, 0.0).unwrap();
        let b = PeakSpec::new(shape, 3.0, 5.0).unwrap();
        let spec = SignalSpec::new(vec![a.clone(), b.clone()], 60.0).unwrap();
        let mu = synthesize_signal(&spec, 1.0).unwrap();
        for i in 0..mu.len() {
            let t = mu.time(i);
            assert!((mu.values()[i] - a.eval(t) - b.eval(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn shapes_have_unit_action_up_to_truncation() {
        let cases = [
            (PeakShape::Epanechnikov { halfwidth: 4.0 }, 1.0),
            (PeakShape::Triangular { halfwidth: 4.0 }, 1.0),
            (PeakShape::TruncGaussian { b: 2.0, c: 3.0 }, 0.9973),
            (PeakShape::Laplace { b: 2.0, c: 3.0 }, 1.0 - (-3.0f64).exp()),
            (PeakShape::Cauchy { b: 2.0, c: 3.0 }, 2.0 / PI * 3.0f64.atan()),
        ];
        for (shape, mass) in cases {
            let (lo, hi) = shape.support();
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let integral: f64 = (0..n).map(|i| shape.eval(lo + (i as f64 + 0.5) * h) * h).sum();
            assert!((integral - mass).abs() < 1e-3, "{shape:?}: {integral}");
        }
    }

    #[test]
    fn custom_profile_support_and_interpolation() {
        let shape = PeakShape::Custom {
            dt: 1.0,
            center: 3,
            values: vec![0.0, 0.0, 1.0, 2.0, 1.0, 0.0],
        };
        assert_eq!(shape.support(), (-2.0, 2.0));
        assert_eq!(shape.eval(0.0), 2.0);
        assert_eq!(shape.eval(-0.5), 1.5);
        assert_eq!(shape.eval(-1.5), 0.5);
        assert_eq!(shape.eval(2.5), 0.0);
    }

    #[test]
    fn regions_without_peaks() {
        let spec = SignalSpec::new(vec![], 100.0).unwrap();
        let kernel = gaussian_kernel(3.0, 3.0, 1.0).unwrap();
        let r = compute_regions(&spec, &kernel);
        assert!(r.signal.is_empty());
        assert!(r.transition.is_empty());
        assert_eq!(r.null.intervals(), &[Interval::closed(-50.0, 50.0)]);
    }

    #[test]
    fn single_peak_transition_region() {
        let spec = SignalSpec::new(vec![gauss_peak(1.0, 0.0)], 100.0).unwrap();
        let kernel = gaussian_kernel(3.0, 3.0, 1.0).unwrap();
        let r = compute_regions(&spec, &kernel);
        assert_eq!(r.smoothed_signal.intervals(), &[Interval::closed(-18.0, 18.0)]);
        let t = r.transition.intervals();
        assert_eq!(t.len(), 2);
        assert_eq!(
            t[0],
            Interval {
                lo: -18.0,
                hi: -9.0,
                lo_closed: true,
                hi_closed: false
            }
        );
        assert_eq!(
            t[1],
            Interval {
                lo: 9.0,
                hi: 18.0,
                lo_closed: false,
                hi_closed: true
            }
        );
        assert_eq!(r.classify(-9.0), Region::Signal);
        assert_eq!(r.classify(-9.5), Region::Transition);
        assert_eq!(r.classify(18.0), Region::Transition);
        assert_eq!(r.classify(18.5), Region::Null);
    }

    #[test]
    fn two_peak_smoothed_support() {
        // Interval arithmetic by hand: [−9,9] ⊕ [−9,9] and [41,59] ⊕ [−9,9].
        let spec =
            SignalSpec::new(vec![gauss_peak(1.0, 0.0), gauss_peak(1.0, 50.0)], 200.0).unwrap();
        let kernel = gaussian_kernel(3.0, 3.0, 1.0).unwrap();
        let r = compute_regions(&spec, &kernel);
        assert_eq!(
            r.smoothed_signal.intervals(),
            &[Interval::closed(-18.0, 18.0), Interval::closed(32.0, 68.0)]
        );
        assert!((r.transition.measure() - 36.0).abs() < 1e-12);
        assert!((r.smoothed_null.measure() - (200.0 - 72.0)).abs() < 1e-12);
    }

    fn arb_spec() -> impl Strategy<Value = SignalSpec> {
        prop::collection::vec((1.0f64..6.0, 0.5f64..20.0, -300.0f64..300.0), 0..6).prop_map(
            |peaks| {
                let peaks = peaks
                    .into_iter()
                    .map(|(w, a, c)| {
                        PeakSpec::new(PeakShape::Epanechnikov { halfwidth: w * 3.0 }, a, c)
                            .unwrap()
                    })
                    .collect();
                SignalSpec::new(peaks, 700.0).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn region_measures_and_partition(spec in arb_spec(), gamma in 1.0f64..8.0, t in -350.0f64..350.0) {
            let kernel = gaussian_kernel(gamma, 3.0, 1.0).unwrap();
            let r = compute_regions(&spec, &kernel);
            prop_assert!(r.smoothed_signal.measure() >= r.signal.measure() - 1e-9);
            prop_assert!(r.smoothed_null.measure() <= r.null.measure() + 1e-9);
            prop_assert!((r.signal.measure() + r.null.measure() - 700.0).abs() < 1e-9);
            let in_s1 = r.signal.contains(t);
            let in_t = r.transition.contains(t);
            let in_s0g = r.smoothed_null.contains(t);
            prop_assert_eq!(in_s1 as u8 + in_t as u8 + in_s0g as u8, 1);
            prop_assert_eq!(r.null.contains(t), !in_s1);
            prop_assert!(!(in_t && in_s1));
        }

        #[test]
        fn synthesis_is_linear_in_amplitude(spec in arb_spec()) {
            let mu = synthesize_signal(&spec, 1.0).unwrap();
            let mut doubled = spec.clone();
            doubled.peaks.iter_mut().for_each(|p| p.amplitude *= 2.0);
            let mu2 = synthesize_signal(&doubled, 1.0).unwrap();
            for (a, b) in mu.values().iter().zip(mu2.values()) {
                prop_assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
                prop_assert!(*a >= 0.0);
            }
        }
    }
}
