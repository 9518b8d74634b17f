//! Smoothing kernels, direct convolution and template estimation.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Result, StemError};
use crate::grid_signal::{same_spacing, SampledSequence};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Quartic,
    Template,
}

/// A smoothing weight function sampled on the signal grid.
///
/// `weights[center]` is the value at `t = 0`; weight `k` sits at
/// `(k − center)·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    weights: Vec<f64>,
    dt: f64,
    center: usize,
    bandwidth: f64,
    family: KernelFamily,
}

impl Kernel {
    pub fn new(
        weights: Vec<f64>,
        dt: f64,
        center: usize,
        bandwidth: f64,
        family: KernelFamily,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("weights", "kernel must have at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights", "weights must be finite"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if center >= weights.len() {
            return Err(invalid("center", "index outside the weight array"));
        }
        if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
            return Err(invalid("bandwidth", "must be nonnegative"));
        }
        Ok(Self {
            weights,
            dt,
            center,
            bandwidth,
            family,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// γ; zero for templates.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Offsets (in samples) of the first and last weight from the origin.
    pub fn extent_samples(&self) -> (usize, usize) {
        (self.center, self.weights.len() - 1 - self.center)
    }

    /// Extent of the support to the left and right of `t = 0`, in time units.
    pub fn extent(&self) -> (f64, f64) {
        let (l, r) = self.extent_samples();
        (l as f64 * self.dt, r as f64 * self.dt)
    }

    /// Half the support, in samples (the larger side for asymmetric kernels).
    pub fn half_support(&self) -> usize {
        let (l, r) = self.extent_samples();
        l.max(r)
    }

    /// Discrete action `Σ w·dt`.
    pub fn action(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.dt
    }

    /// `Σ w²·dt`, the discrete `∫ w²`.
    pub fn energy(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>() * self.dt
    }

    /// Writes the single-column CSV form: a `# dt=<dt> center=<index>` header
    /// followed by one weight per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.weights.len() * 24);
        let _ = writeln!(out, "# dt={} center={}", self.dt, self.center);
        for w in &self.weights {
            let _ = writeln!(out, "{w}");
        }
        out
    }

    /// Parses the CSV form written by [`to_csv`](Self::to_csv). Other comment
    /// lines are ignored; the result is a template-family kernel.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut dt = None;
        let mut center = None;
        let mut weights = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for token in comment.split_whitespace() {
                    if let Some(v) = token.strip_prefix("dt=") {
                        dt = Some(v.parse::<f64>().map_err(|_| {
                            invalid("dt", format!("unparsable value `{v}` in template header"))
                        })?);
                    } else if let Some(v) = token.strip_prefix("center=") {
                        center = Some(v.parse::<usize>().map_err(|_| {
                            invalid("center", format!("unparsable value `{v}` in template header"))
                        })?);
                    }
                }
                continue;
            }
            let w = line.parse::<f64>().map_err(|_| {
                invalid("weights", format!("line {}: `{line}` is not a number", lineno + 1))
            })?;
            weights.push(w);
        }
        let dt = dt.ok_or_else(|| invalid("dt", "template header lacks `dt=`"))?;
        let center = center.ok_or_else(|| invalid("center", "template header lacks `center=`"))?;
        Kernel::new(weights, dt, center, 0.0, KernelFamily::Template)
    }

    fn normalized(mut self) -> Self {
        let action = self.action();
        self.weights.iter_mut().for_each(|w| *w /= action);
        self
    }
}

fn check_bandwidth(gamma: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    if gamma < dt {
        return Err(StemError::BandwidthTooSmall { gamma, dt });
    }
    Ok(())
}

fn symmetric(half: usize, dt: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let half = half as isize;
    (-half..=half).map(|i| f(i as f64 * dt)).collect()
}

/// Gaussian density `(1/γ) φ(t/γ)` sampled on `[−γd, γd]`, renormalised to
/// unit discrete action.
pub fn gaussian_kernel(gamma: f64, d: f64, dt: f64) -> Result<Kernel> {
    check_bandwidth(gamma, dt)?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid("d", format!("truncation must be positive, got {d}")));
    }
    let half = (gamma * d / dt + 1e-9).floor() as usize;
    let weights = symmetric(half, dt, |t| normal::pdf(t / gamma) / gamma);
    Ok(Kernel::new(weights, dt, half, gamma, KernelFamily::Gaussian)?.normalized())
}

/// Quartic (biweight) kernel `15/(16γ) (1 − (t/γ)²)²` on `[−γ, γ]`,
/// renormalised to unit discrete action.
pub fn quartic_kernel(gamma: f64, dt: f64) -> Result<Kernel> {
    check_bandwidth(gamma, dt)?;
    let half = (gamma / dt + 1e-9).floor() as usize;
    let weights = symmetric(half, dt, |t| {
        let x = t / gamma;
        if x.abs() >= 1.0 {
            0.0
        } else {
            15.0 / (16.0 * gamma) * (1.0 - x * x).powi(2)
        }
    });
    Ok(Kernel::new(weights, dt, half, gamma, KernelFamily::Quartic)?.normalized())
}

/// Direct convolution `y[i] = Σ_k w[k]·x[i − (k − center)]·dt` with zero
/// padding.
///
/// The output keeps the input grid. Samples whose sum reached into the
/// padding are marked as margin on the result (on top of any margin the
/// input already carried).
pub fn convolve(seq: &SampledSequence, kernel: &Kernel) -> Result<SampledSequence> {
    if !same_spacing(seq.dt(), kernel.dt()) {
        return Err(StemError::GridMismatch {
            sequence: seq.dt(),
            kernel: kernel.dt(),
        });
    }
    let x = seq.values();
    let n = x.len();
    let dt = seq.dt();
    let c = kernel.center() as isize;
    let scaled: Vec<f64> = kernel.weights().iter().map(|w| w * dt).collect();
    let mut out = vec![0.0; n];
    for (i, y) in out.iter_mut().enumerate() {
        // x index j = i + c − k must lie in [0, n).
        let i = i as isize;
        let k_lo = (i + c - (n as isize - 1)).max(0) as usize;
        let k_hi = ((i + c) as usize).min(scaled.len() - 1);
        if k_lo > k_hi {
            continue;
        }
        let mut acc = 0.0;
        for (k, w) in scaled.iter().enumerate().take(k_hi + 1).skip(k_lo) {
            acc += w * x[(i + c) as usize - k];
        }
        *y = acc;
    }
    let (left, right) = kernel.extent_samples();
    let (ml, mr) = seq.margins();
    Ok(SampledSequence::new(out, dt, seq.t0())?.with_margins(ml + right, mr + left))
}

/// Averages fixed-length windows centred on the local maxima of `training`
/// that exceed `height_threshold`, then scales the average so its maximum
/// is one.
///
/// Windows reaching past either end of the recording are zero-padded. The
/// returned kernel has its origin at `window / 2`, the aligned maximum.
pub fn estimate_template(
    training: &SampledSequence,
    height_threshold: f64,
    window: usize,
) -> Result<Kernel> {
    if window < 3 {
        return Err(invalid("window", format!("must be at least 3, got {window}")));
    }
    let x = training.values();
    let peaks: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > height_threshold && x[i] > x[i - 1] && x[i] > x[i + 1])
        .collect();
    if peaks.is_empty() {
        return Err(StemError::NoQualifyingMaxima { count: 0 });
    }
    let center = window / 2;
    let mut avg = vec![0.0; window];
    for &p in &peaks {
        for (k, a) in avg.iter_mut().enumerate() {
            let j = p as isize + k as isize - center as isize;
            if j >= 0 && (j as usize) < x.len() {
                *a += x[j as usize];
            }
        }
    }
    let count = peaks.len() as f64;
    avg.iter_mut().for_each(|a| *a /= count);
    let peak = avg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(StemError::Degenerate(
            "averaged template has no positive maximum".into(),
        ));
    }
    avg.iter_mut().for_each(|a| *a /= peak);
    Kernel::new(avg, training.dt(), center, 0.0, KernelFamily::Template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn seq(values: Vec<f64>) -> SampledSequence {
        SampledSequence::new(values, 1.0, 0.0).unwrap()
    }

    #[test]
    fn gaussian_kernel_shape() {
        let k = gaussian_kernel(3.0, 3.0, 1.0).unwrap();
        assert_eq!(k.len(), 19);
        assert_eq!(k.center(), 9);
        let w = k.weights();
        for i in 0..19 {
            assert_eq!(w[i], w[18 - i]);
        }
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, w[9]);
        assert!((k.action() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_matches_quadrature() {
        // Cell-averaged density over [t − dt/2, t + dt/2] by midpoint rule at
        // 1000 sub-points, divided by the truncated mass.
        let (gamma, d, dt) = (1.0, 3.0, 0.1);
        let k = gaussian_kernel(gamma, d, dt).unwrap();
        let density = |t: f64| normal::pdf(t / gamma) / gamma;
        let sub = 1000;
        let mass: f64 = (0..60_000)
            .map(|i| density(-3.0 + (i as f64 + 0.5) * 6.0 / 60_000.0) * 6.0 / 60_000.0)
            .sum();
        for (i, w) in k.weights().iter().enumerate() {
            let t = (i as f64 - k.center() as f64) * dt;
            let cell: f64 = (0..sub)
                .map(|s| density(t - dt / 2.0 + (s as f64 + 0.5) * dt / sub as f64))
                .sum::<f64>()
                / sub as f64;
            assert!((w - cell / mass).abs() < 1e-3, "t={t} w={w} oracle={}", cell / mass);
        }
        assert!((k.weights()[k.center()] - 0.39894).abs() < 2e-3);
    }

    #[test]
    fn bandwidth_below_grid_is_rejected() {
        assert!(matches!(
            gaussian_kernel(0.5, 3.0, 1.0),
            Err(StemError::BandwidthTooSmall { .. })
        ));
        assert!(matches!(
            quartic_kernel(0.9, 1.0),
            Err(StemError::BandwidthTooSmall { .. })
        ));
        assert!(gaussian_kernel(2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn quartic_kernel_shape() {
        let k = quartic_kernel(18.0, 1.0).unwrap();
        assert_eq!(k.len(), 37);
        assert!((k.action() - 1.0).abs() < 1e-12);
        // Raw centre value 15/(16·18) before renormalisation; the discrete sum
        // of the raw samples is within a fraction of a percent of one.
        assert!((k.weights()[18] - 15.0 / (16.0 * 18.0)).abs() < 1e-3 * 0.05208);
        let small = quartic_kernel(1.0, 0.5).unwrap();
        assert_eq!(small.len(), 5);
        assert_eq!(small.weights()[0], 0.0);
        assert_eq!(small.weights()[4], 0.0);
        for gamma in [1.0, 2.5, 7.3, 40.0] {
            let w = quartic_kernel(gamma, 1.0).unwrap().weights().to_vec();
            let n = w.len();
            for i in 0..n {
                assert_eq!(w[i], w[n - 1 - i]);
            }
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let dt = 0.5;
        let delta = Kernel::new(vec![1.0 / dt], dt, 0, 0.0, KernelFamily::Template).unwrap();
        let x = SampledSequence::new(vec![1.0, -2.0, 3.5, 0.25], dt, 1.0).unwrap();
        let y = convolve(&x, &delta).unwrap();
        assert_eq!(y.values(), x.values());
        assert_eq!(y.margins(), (0, 0));
    }

    #[test]
    fn constant_input_is_preserved_in_the_interior() {
        let k = gaussian_kernel(3.0, 3.0, 1.0).unwrap();
        let y = convolve(&seq(vec![2.5; 100]), &k).unwrap();
        assert_eq!(y.valid_range(), 9..91);
        for v in y.valid_values() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        assert!(y.values()[0] < 2.0);
    }

    #[test]
    fn asymmetric_kernel_direction() {
        // weights at offsets 0 and +1: y[i] = w0·x[i] + w1·x[i−1]
        let k = Kernel::new(vec![1.0, 10.0], 1.0, 0, 0.0, KernelFamily::Template).unwrap();
        let y = convolve(&seq(vec![1.0, 2.0, 3.0]), &k).unwrap();
        assert_eq!(y.values(), &[1.0, 12.0, 23.0]);
        assert_eq!(y.valid_range(), 1..3);
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let k = gaussian_kernel(3.0, 3.0, 0.5).unwrap();
        assert!(matches!(
            convolve(&seq(vec![0.0; 50]), &k),
            Err(StemError::GridMismatch { .. })
        ));
    }

    #[test]
    fn smoothed_white_noise_variance() {
        // σ²_γ = σ²/(2√π γ) for unit white noise at dt = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let k = gaussian_kernel(3.0, 3.0, 1.0).unwrap();
        let y = convolve(&seq(x), &k).unwrap();
        let v = y.valid_values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let expected = 1.0 / (2.0 * std::f64::consts::PI.sqrt() * 3.0);
        assert!((expected - 0.09403).abs() < 1e-5);
        assert!((var / expected - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn smoothing_widens_support() {
        let mut x = vec![0.0; 60];
        (20..=30).for_each(|i| x[i] = 1.0);
        let k = gaussian_kernel(2.0, 3.0, 1.0).unwrap();
        let y = convolve(&seq(x), &k).unwrap();
        let nz: Vec<usize> = (0..60).filter(|&i| y.values()[i] != 0.0).collect();
        assert_eq!(nz.first(), Some(&14));
        assert_eq!(nz.last(), Some(&36));
    }

    fn triangle(len: usize, at: usize, half: usize, height: f64) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let d = (i as f64 - at as f64).abs();
                (height * (1.0 - d / half as f64)).max(0.0)
            })
            .collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn template_recovers_a_clean_pulse() {
        let x = triangle(200, 80, 10, 3.0);
        let k = estimate_template(&seq(x.clone()), 1.0, 31).unwrap();
        assert_eq!(k.len(), 31);
        assert_eq!(k.center(), 15);
        assert_eq!(k.family(), KernelFamily::Template);
        let truth: Vec<f64> = x[65..96].iter().map(|v| v / 3.0).collect();
        assert!(correlation(k.weights(), &truth) > 0.99);
        assert!((k.weights()[15] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn template_of_identical_pulses_equals_pulse() {
        let a = triangle(300, 60, 8, 2.0);
        let b = triangle(300, 200, 8, 2.0);
        let x: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let k = estimate_template(&seq(x), 1.0, 21).unwrap();
        let single = estimate_template(&seq(a), 1.0, 21).unwrap();
        for (p, q) in k.weights().iter().zip(single.weights()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn template_threshold_too_high() {
        let x = triangle(100, 50, 5, 1.0);
        assert_eq!(
            estimate_template(&seq(x), 5.0, 11),
            Err(StemError::NoQualifyingMaxima { count: 0 })
        );
        assert!(estimate_template(&seq(vec![0.0; 10]), 0.0, 2).is_err());
    }

    #[test]
    fn template_csv_roundtrip() {
        let k = Kernel::new(vec![-0.25, 1.0, 0.5, 1e-17], 0.1, 1, 0.0, KernelFamily::Template)
            .unwrap();
        let text = k.to_csv();
        assert!(text.starts_with("# dt=0.1 center=1\n"));
        assert_eq!(Kernel::from_csv(&text).unwrap(), k);
        let with_provenance = format!("# stem 0.1.0\n{text}");
        assert_eq!(Kernel::from_csv(&with_provenance).unwrap(), k);
        assert!(Kernel::from_csv("1.0\n2.0\n").is_err());
    }

    proptest! {
        #[test]
        fn convolution_is_linear(
            x in prop::collection::vec(-5.0f64..5.0, 40),
            y in prop::collection::vec(-5.0f64..5.0, 40),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            gamma in 1.0f64..4.0,
        ) {
            let k = gaussian_kernel(gamma, 3.0, 1.0).unwrap();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = convolve(&seq(combo), &k).unwrap();
            let cx = convolve(&seq(x), &k).unwrap();
            let cy = convolve(&seq(y), &k).unwrap();
            for i in 0..40 {
                let rhs = a * cx.values()[i] + b * cy.values()[i];
                prop_assert!((lhs.values()[i] - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn convolution_commutes_with_shift(
            x in prop::collection::vec(-5.0f64..5.0, 60),
            shift in 1usize..10,
            gamma in 1.0f64..3.0,
        ) {
            let k = quartic_kernel(gamma * 2.0, 1.0).unwrap();
            let mut shifted = vec![0.0; shift];
            shifted.extend_from_slice(&x[..60 - shift]);
            let a = convolve(&seq(x), &k).unwrap();
            let b = convolve(&seq(shifted), &k).unwrap();
            let h = k.half_support();
            for i in (h + shift)..(60 - h) {
                prop_assert!((a.values()[i - shift] - b.values()[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn smoothing_kernels_are_unimodal(gamma in 1.0f64..30.0, d in 1.0f64..5.0) {
            for k in [gaussian_kernel(gamma, d, 1.0).unwrap(), quartic_kernel(gamma, 1.0).unwrap()] {
                let w = k.weights();
                prop_assert!(w.iter().all(|v| *v >= 0.0));
                prop_assert!((k.action() - 1.0).abs() < 1e-6);
                let maxima = (0..w.len())
                    .filter(|&i| {
                        let left = if i == 0 { f64::NEG_INFINITY } else { w[i - 1] };
                        let right = if i + 1 == w.len() { f64::NEG_INFINITY } else { w[i + 1] };
                        w[i] > left && w[i] > right
                    })
                    .count();
                prop_assert_eq!(maxima, 1);
            }
        }
    }
}
