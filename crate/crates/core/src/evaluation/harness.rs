//! Monte Carlo sweeps over amplitude and bandwidth grids.
//!
//! Replication `r` draws its noise from stream `r` of the master seed, and
//! the same noise is reused for every cell of that replication. Replications
//! are processed in fixed-size blocks whose tallies are merged in block
//! order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use super::{score_trial, smoothed_peak_height, TrialOutcome};
use crate::baselines::{pointwise_correct, pointwise_pvalues, significant_maxima, supremum_detect, RiceConvention};
use crate::error::{invalid, Result, StemError};
use crate::grid_signal::{compute_regions, synthesize_signal, PeakShape, PeakSpec, RegionSet, SampledSequence, SignalSpec};
use crate::kernels::{convolve, gaussian_kernel, quartic_kernel, Kernel};
use crate::multiple_testing::{asymptotic_thresholds, benjamini_hochberg, bonferroni, Candidate, Procedure};
use crate::noise_model::{closed_form_moments, estimate_moments, generate_noise_with, stream_rng, GaussianAcvfParams, NoiseMoments};
use crate::normal;
use crate::palm::{candidate_pvalues, expected_maxima_density, PalmParams};
use crate::stem::local_maxima_in;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESET_NAMES: [&str; 4] = ["sim31", "sim32", "sim34", "sim35"];

/// Replications per parallel work unit.
const BLOCK: usize = 16;

/// Streams at and above this offset feed the moment calibration.
const CALIBRATION_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmplitudeAxis {
    /// Use the amplitudes in the signal spec.
    #[default]
    AsSpecified,
    /// One cell per value; every peak gets that amplitude.
    Common { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default)]
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Gaussian density of width `gamma`, cut at `±truncation·gamma`.
    Gaussian { gamma: f64, truncation: f64 },
    Quartic { gamma: f64 },
}

impl KernelSpec {
    pub fn gamma(&self) -> f64 {
        match self {
            KernelSpec::Gaussian { gamma, .. } | KernelSpec::Quartic { gamma } => *gamma,
        }
    }

    pub fn build(&self, dt: f64) -> Result<Kernel> {
        match self {
            KernelSpec::Gaussian { gamma, truncation } => gaussian_kernel(*gamma, *truncation, dt),
            KernelSpec::Quartic { gamma } => quartic_kernel(*gamma, dt),
        }
    }
}

/// Where the smoothed-noise moments come from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentSource {
    /// Exact moments of the Gaussian autocorrelation model; Gaussian kernels
    /// only.
    #[default]
    ClosedForm,
    /// Averaged empirical moments of `sequences` independent noise
    /// sequences of `length` samples, smoothed by the same kernel.
    Empirical { length: usize, sequences: usize },
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDesign {
    pub schema: u32,
    pub name: String,
    pub signal: SignalSpec,
    #[serde(default)]
    pub amplitudes: AmplitudeAxis,
    pub noise: NoiseSpec,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub kernels: Vec<KernelSpec>,
    #[serde(default)]
    pub moments: MomentSource,
    pub procedures: Vec<Procedure>,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub rice_convention: RiceConvention,
    /// Adds cells that pick, per replication, the kernel with the most
    /// rejections.
    #[serde(default)]
    pub auto_bandwidth: bool,
}

fn design_error(msg: impl Into<String>) -> StemError {
    StemError::Design(msg.into())
}

impl SimulationDesign {
    /// Checks everything that can be checked without drawing noise.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(design_error(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.signal.validate()?;
        GaussianAcvfParams::new(self.noise.sigma, self.noise.nu)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(design_error("dt must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(design_error(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.replications == 0 {
            return Err(design_error("replications must be positive"));
        }
        if self.kernels.is_empty() {
            return Err(design_error("no kernels"));
        }
        if self.procedures.is_empty() {
            return Err(design_error("no procedures"));
        }
        for (i, p) in self.procedures.iter().enumerate() {
            if self.procedures[..i].contains(p) {
                return Err(design_error(format!("procedure `{}` listed twice", p.name())));
            }
        }
        if let AmplitudeAxis::Common { values } = &self.amplitudes {
            if values.is_empty() || values.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(design_error("amplitudes must be a non-empty list of positive values"));
            }
        }
        if self.auto_bandwidth && !self.procedures.iter().any(|p| is_stem(*p)) {
            return Err(design_error("auto_bandwidth needs bonferroni or bh among the procedures"));
        }
        match self.moments {
            MomentSource::ClosedForm => {
                if self.kernels.iter().any(|k| matches!(k, KernelSpec::Quartic { .. })) {
                    return Err(design_error("closed-form moments need Gaussian kernels"));
                }
            }
            MomentSource::Empirical { length, sequences } => {
                if sequences == 0 || length < 10 {
                    return Err(design_error("empirical moments need sequences > 0 and length >= 10"));
                }
            }
        }
        let n = self.signal.grid_len(self.dt);
        for spec in &self.kernels {
            let k = spec.build(self.dt)?;
            if k.len() >= n {
                return Err(design_error(format!(
                    "kernel with gamma {} is longer than the domain",
                    spec.gamma()
                )));
            }
        }
        for spec in self.signals()? {
            synthesize_signal(&spec, self.dt)?;
        }
        Ok(())
    }

    /// Signal spec per amplitude cell.
    pub fn signals(&self) -> Result<Vec<SignalSpec>> {
        match &self.amplitudes {
            AmplitudeAxis::AsSpecified => Ok(vec![self.signal.clone()]),
            AmplitudeAxis::Common { values } => values
                .iter()
                .map(|&a| {
                    let mut s = self.signal.clone();
                    for p in &mut s.peaks {
                        p.amplitude = a;
                    }
                    s.validate()?;
                    Ok(s)
                })
                .collect(),
        }
    }

    fn amplitude_labels(&self) -> Vec<Option<f64>> {
        match &self.amplitudes {
            AmplitudeAxis::AsSpecified => vec![None],
            AmplitudeAxis::Common { values } => values.iter().map(|a| Some(*a)).collect(),
        }
    }

    pub fn noise_params(&self) -> GaussianAcvfParams {
        GaussianAcvfParams {
            sigma: self.noise.sigma,
            nu: self.noise.nu,
        }
    }
}

fn is_stem(p: Procedure) -> bool {
    matches!(p, Procedure::Bonferroni | Procedure::BenjaminiHochberg)
}

fn tg_train(domain: f64, j: usize, amplitude: f64) -> Vec<PeakSpec> {
    (0..j)
        .map(|i| {
            let center = -domain / 2.0 + (i as f64 + 0.5) * domain / j as f64;
            PeakSpec {
                shape: PeakShape::TruncGaussian { b: 3.0, c: 3.0 },
                amplitude,
                center,
            }
        })
        .collect()
}

fn gaussian_grid(gammas: &[f64]) -> Vec<KernelSpec> {
    gammas
        .iter()
        .map(|&gamma| KernelSpec::Gaussian {
            gamma,
            truncation: 3.0,
        })
        .collect()
}

/// Built-in designs. The amplitude and bandwidth grids, and the whole
/// unequal-peaks signal, are reconstructions.
pub fn preset(name: &str) -> Result<SimulationDesign> {
    let equal_peaks = SignalSpec {
        peaks: tg_train(1000.0, 10, 15.0),
        domain_length: 1000.0,
    };
    let base = SimulationDesign {
        schema: SCHEMA_VERSION,
        name: name.to_string(),
        signal: equal_peaks,
        amplitudes: AmplitudeAxis::Common {
            values: vec![9.0, 12.0, 15.0],
        },
        noise: NoiseSpec { sigma: 1.0, nu: 0.0 },
        dt: 1.0,
        kernels: gaussian_grid(&(1..=10).map(f64::from).collect::<Vec<_>>()),
        moments: MomentSource::ClosedForm,
        procedures: vec![Procedure::Bonferroni, Procedure::BenjaminiHochberg],
        alpha: 0.05,
        replications: 10_000,
        seed: 0,
        rice_convention: RiceConvention::Density,
        auto_bandwidth: false,
    };
    let design = match name {
        "sim31" => base,
        "sim32" => SimulationDesign {
            signal: unequal_peaks(),
            amplitudes: AmplitudeAxis::AsSpecified,
            kernels: [6.0, 12.0, 18.0, 24.0, 30.0, 40.0]
                .iter()
                .map(|&gamma| KernelSpec::Quartic { gamma })
                .collect(),
            moments: MomentSource::Empirical {
                length: 1000,
                sequences: 100,
            },
            ..base
        },
        "sim34" => SimulationDesign {
            procedures: Procedure::ALL.to_vec(),
            ..base
        },
        "sim35" => SimulationDesign {
            kernels: gaussian_grid(&(3..=12).map(|i| i as f64 / 2.0).collect::<Vec<_>>()),
            auto_bandwidth: true,
            ..base
        },
        other => {
            return Err(invalid(
                "preset",
                format!("unknown preset `{other}` (expected one of {})", PRESET_NAMES.join(", ")),
            ))
        }
    };
    design.validate()?;
    Ok(design)
}

/// Five peaks of different shapes with mean half-support 24: one broad
/// strong Epanechnikov peak and four narrow weak ones. Amplitudes were
/// chosen so the best quartic bandwidth on the preset grid is 18.
fn unequal_peaks() -> SignalSpec {
    let peaks = vec![
        (PeakShape::Epanechnikov { halfwidth: 48.0 }, 80.0, -400.0),
        (PeakShape::Triangular { halfwidth: 18.0 }, 20.0, -200.0),
        (PeakShape::TruncGaussian { b: 6.0, c: 3.0 }, 20.0, 0.0),
        (PeakShape::Laplace { b: 6.0, c: 3.0 }, 20.0, 200.0),
        (PeakShape::Cauchy { b: 6.0, c: 3.0 }, 20.0, 400.0),
    ];
    SignalSpec {
        peaks: peaks
            .into_iter()
            .map(|(shape, amplitude, center)| PeakSpec {
                shape,
                amplitude,
                center,
            })
            .collect(),
        domain_length: 1000.0,
    }
}

/// Integer counts plus FDP sums for one cell. Merging adds fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub trials: u64,
    /// Trials with at least one false rejection.
    pub any_false: u64,
    pub fdp_sum: f64,
    pub fdp_sq_sum: f64,
    /// Σ detected peaks, and Σ of its square.
    pub detected: u64,
    pub detected_sq: u64,
    /// Σ tested maxima inside true supports, and Σ of its square.
    pub locmax: u64,
    pub locmax_sq: u64,
    pub rejections: u64,
    pub false_rejections: u64,
    pub transition_rejections: u64,
    /// Auto-bandwidth cells: how often each kernel was chosen.
    pub chosen: Vec<u64>,
}

impl Tally {
    fn record(&mut self, o: &TrialOutcome, chosen: Option<usize>) {
        let detected = o.detected_flags.iter().filter(|&&d| d).count() as u64;
        let locmax = o.locmax_per_peak.iter().sum::<usize>() as u64;
        let fdp = o.fdp();
        self.trials += 1;
        self.any_false += u64::from(o.v > 0);
        self.fdp_sum += fdp;
        self.fdp_sq_sum += fdp * fdp;
        self.detected += detected;
        self.detected_sq += detected * detected;
        self.locmax += locmax;
        self.locmax_sq += locmax * locmax;
        self.rejections += o.r as u64;
        self.false_rejections += o.v as u64;
        self.transition_rejections += o.transition as u64;
        if let Some(i) = chosen {
            self.chosen[i] += 1;
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.trials += other.trials;
        self.any_false += other.any_false;
        self.fdp_sum += other.fdp_sum;
        self.fdp_sq_sum += other.fdp_sq_sum;
        self.detected += other.detected;
        self.detected_sq += other.detected_sq;
        self.locmax += other.locmax;
        self.locmax_sq += other.locmax_sq;
        self.rejections += other.rejections;
        self.false_rejections += other.false_rejections;
        self.transition_rejections += other.transition_rejections;
        if self.chosen.len() < other.chosen.len() {
            self.chosen.resize(other.chosen.len(), 0);
        }
        for (a, b) in self.chosen.iter_mut().zip(&other.chosen) {
            *a += b;
        }
    }
}

/// Mean and standard error from a sum and a sum of squares.
fn mean_se(sum: f64, sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    /// `None` when the spec amplitudes are used.
    pub amplitude: Option<f64>,
    /// `None` for auto-bandwidth cells.
    pub gamma: Option<f64>,
    pub procedure: Procedure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub key: CellKey,
    pub peaks: usize,
    pub tally: Tally,
}

impl SweepCell {
    pub fn replications(&self) -> u64 {
        self.tally.trials
    }

    /// `P(V ≥ 1)` with its binomial standard error.
    pub fn fwer(&self) -> (f64, f64) {
        let n = self.tally.trials as f64;
        let p = self.tally.any_false as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// `E[V/(R ∨ 1)]`
    pub fn fdr(&self) -> (f64, f64) {
        mean_se(self.tally.fdp_sum, self.tally.fdp_sq_sum, self.tally.trials as f64)
    }

    /// Mean fraction of peaks detected.
    pub fn power(&self) -> (f64, f64) {
        let j = self.peaks.max(1) as f64;
        let (m, se) = mean_se(self.tally.detected as f64, self.tally.detected_sq as f64, self.tally.trials as f64);
        (m / j, se / j)
    }

    pub fn locmax_per_peak(&self) -> (f64, f64) {
        let j = self.peaks.max(1) as f64;
        let (m, se) = mean_se(self.tally.locmax as f64, self.tally.locmax_sq as f64, self.tally.trials as f64);
        (m / j, se / j)
    }

    pub fn mean_rejections(&self) -> f64 {
        self.tally.rejections as f64 / self.tally.trials as f64
    }

    /// The error rate the procedure targets: FDR for BH variants, else FWER.
    pub fn error(&self) -> (f64, f64) {
        if self.key.procedure.controls_fdr() {
            self.fdr()
        } else {
            self.fwer()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub design: SimulationDesign,
    /// Moments used for each kernel, in design order.
    pub moments: Vec<NoiseMoments>,
    pub cells: Vec<SweepCell>,
}

fn label(v: Option<f64>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

impl SweepResult {
    /// Cell for a fixed bandwidth (or `None` for auto).
    pub fn cell(&self, amplitude: Option<f64>, gamma: Option<f64>, procedure: Procedure) -> Option<&SweepCell> {
        self.cells.iter().find(|c| {
            c.key.amplitude == amplitude && c.key.gamma == gamma && c.key.procedure == procedure
        })
    }

    /// Tidy table: one row per cell, procedure and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("amplitude,gamma,procedure,metric,estimate,std_error,replications\n");
        for c in &self.cells {
            let a = label(c.key.amplitude, "spec");
            let g = label(c.key.gamma, "auto");
            let n = c.replications();
            let mut row = |metric: &str, (est, se): (f64, f64)| {
                let _ = writeln!(out, "{a},{g},{},{metric},{est},{se},{n}", c.key.procedure.name());
            };
            row("fwer", c.fwer());
            row("fdr", c.fdr());
            row("power", c.power());
            row("locmax_per_peak", c.locmax_per_peak());
            row("mean_rejections", (c.mean_rejections(), f64::NAN));
            if c.key.gamma.is_none() {
                for (i, k) in self.design.kernels.iter().enumerate() {
                    let p = c.tally.chosen[i] as f64 / n as f64;
                    row(&format!("chosen_gamma_{}", k.gamma()), (p, (p * (1.0 - p) / n as f64).sqrt()));
                }
            }
        }
        out
    }

    /// Subsets of the sweep for plotting, keyed by file name: error rates and
    /// maxima per peak, power against its approximation, all procedures side
    /// by side, and chosen-bandwidth shares when auto-selection ran.
    pub fn plot_tables(&self) -> Result<Vec<(String, String)>> {
        let header = "amplitude,gamma,procedure,metric,estimate,std_error,replications\n";
        let mut errors = String::from(header);
        let mut power = String::from(header);
        let mut compare = String::from(header);
        let mut chosen = String::from(header);
        let signals = self.design.signals()?;
        let labels = self.design.amplitude_labels();
        let length = self.design.signal.domain_length;
        let j = self.design.signal.peaks.len();
        for c in &self.cells {
            let a = label(c.key.amplitude, "spec");
            let g = label(c.key.gamma, "auto");
            let p = c.key.procedure.name();
            let n = c.replications();
            let line = |metric: &str, (e, s): (f64, f64)| format!("{a},{g},{p},{metric},{e},{s},{n}\n");
            let (err_name, err) = if c.key.procedure.controls_fdr() { ("fdr", c.fdr()) } else { ("fwer", c.fwer()) };
            compare.push_str(&line(err_name, err));
            compare.push_str(&line("power", c.power()));
            if let Some(i) = c.key.gamma.and_then(|g| self.design.kernels.iter().position(|k| k.gamma() == g)) {
                if is_stem(c.key.procedure) {
                    errors.push_str(&line(err_name, err));
                    errors.push_str(&line("locmax_per_peak", c.locmax_per_peak()));
                    power.push_str(&line("power", c.power()));
                    if j > 0 {
                        let cell_index = labels.iter().position(|l| *l == c.key.amplitude).unwrap_or(0);
                        let th = self.theoretical_power(&signals[cell_index], i, c.key.procedure, length)?;
                        power.push_str(&line("theoretical_power", (th, 0.0)));
                    }
                }
            } else {
                for (i, k) in self.design.kernels.iter().enumerate() {
                    let share = c.tally.chosen[i] as f64 / n as f64;
                    chosen.push_str(&line(
                        &format!("chosen_gamma_{}", k.gamma()),
                        (share, (share * (1.0 - share) / n as f64).sqrt()),
                    ));
                }
            }
        }
        let mut tables = vec![
            ("errors.csv".to_string(), errors),
            ("power.csv".to_string(), power),
            ("comparison.csv".to_string(), compare),
        ];
        if self.design.auto_bandwidth {
            tables.push(("bandwidths.csv".to_string(), chosen));
        }
        Ok(tables)
    }

    /// Mean over peaks of `Φ((a h_γ(τ) − u*)/σ_γ)` at the asymptotic
    /// threshold of `procedure`.
    fn theoretical_power(&self, signal: &SignalSpec, kernel: usize, procedure: Procedure, length: f64) -> Result<f64> {
        let k = self.design.kernels[kernel].build(self.design.dt)?;
        let m = self.moments[kernel];
        let params = PalmParams::new(m);
        let j = signal.peaks.len() as f64;
        let th = asymptotic_thresholds(self.design.alpha, j / length, expected_maxima_density(&m), &params)?;
        let u = if procedure == Procedure::Bonferroni { th.u_bon(length)? } else { th.u_bh };
        Ok(signal
            .peaks
            .iter()
            .map(|p| normal::cdf((smoothed_peak_height(p, &k) - u) / m.sigma()))
            .sum::<f64>()
            / j)
    }
}

/// Moments for each kernel of the design.
pub fn design_moments(design: &SimulationDesign, kernels: &[Kernel]) -> Result<Vec<NoiseMoments>> {
    let params = design.noise_params();
    match design.moments {
        MomentSource::ClosedForm => design
            .kernels
            .iter()
            .map(|k| closed_form_moments(&params, k.gamma()))
            .collect(),
        MomentSource::Empirical { length, sequences } => kernels
            .iter()
            .map(|k| {
                let all = (0..sequences as u64)
                    .map(|s| {
                        let mut rng = stream_rng(design.seed, CALIBRATION_STREAM + s);
                        let z = generate_noise_with(&params, 0.0, length, design.dt, &mut rng)?;
                        estimate_moments(&convolve(&z, k)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                NoiseMoments::mean_of(&all)
            })
            .collect(),
    }
}

struct Context {
    design: SimulationDesign,
    signals: Vec<SampledSequence>,
    kernels: Vec<Kernel>,
    moments: Vec<NoiseMoments>,
    params: Vec<PalmParams>,
    /// Per amplitude cell, per kernel.
    regions: Vec<Vec<RegionSet>>,
    keys: Vec<CellKey>,
}

impl Context {
    fn cell_index(&self, amp: usize, kernel: Option<usize>, proc: usize) -> usize {
        let p = self.design.procedures.len();
        let k = self.kernels.len();
        match kernel {
            Some(ki) => (amp * k + ki) * p + proc,
            None => {
                let stem: Vec<usize> = (0..p).filter(|&i| is_stem(self.design.procedures[i])).collect();
                let fixed = self.signals.len() * k * p;
                fixed + amp * stem.len() + stem.iter().position(|&i| i == proc).expect("stem procedure")
            }
        }
    }

    fn rejected(&self, kernel: usize, smoothed: &SampledSequence, proc: Procedure) -> Result<(Vec<Candidate>, crate::multiple_testing::CandidateSet)> {
        let m = &self.moments[kernel];
        let params = &self.params[kernel];
        let maxima = local_maxima_in(smoothed, smoothed.valid_range());
        let alpha = self.design.alpha;
        let rejected = match proc {
            Procedure::Bonferroni | Procedure::BenjaminiHochberg => {
                let cands = candidate_pvalues(maxima.clone(), params);
                let report = if proc == Procedure::Bonferroni {
                    bonferroni(&cands, alpha, params)?
                } else {
                    benjamini_hochberg(&cands, alpha, params)?
                };
                report.rejected
            }
            Procedure::PointwiseBonferroni | Procedure::PointwiseBenjaminiHochberg => {
                let samples = pointwise_pvalues(smoothed, m);
                let report = pointwise_correct(&samples, alpha, proc, m)?;
                significant_maxima(&maxima, &report)
            }
            Procedure::Supremum => {
                supremum_detect(smoothed, &maxima, m, alpha, self.design.rice_convention)?.rejected
            }
        };
        Ok((rejected, maxima))
    }

    fn replicate(&self, r: u64, tallies: &mut [Tally]) -> Result<()> {
        let mut rng = stream_rng(self.design.seed, r);
        let n = self.signals[0].len();
        let z = generate_noise_with(&self.design.noise_params(), 0.0, n, self.design.dt, &mut rng)?;
        let np = self.design.procedures.len();
        for (ai, mu) in self.signals.iter().enumerate() {
            let y = mu.add(&SampledSequence::new(z.values().to_vec(), mu.dt(), mu.t0())?)?;
            // (rejections, outcome) per kernel for each stem procedure.
            let mut stem_runs: Vec<Vec<(usize, TrialOutcome)>> = vec![Vec::new(); np];
            for (ki, kernel) in self.kernels.iter().enumerate() {
                let smoothed = convolve(&y, kernel)?;
                for (pi, &proc) in self.design.procedures.iter().enumerate() {
                    let (rejected, maxima) = self.rejected(ki, &smoothed, proc)?;
                    let outcome = score_trial(&rejected, &maxima, &self.regions[ai][ki]);
                    tallies[self.cell_index(ai, Some(ki), pi)].record(&outcome, None);
                    if self.design.auto_bandwidth && is_stem(proc) {
                        stem_runs[pi].push((rejected.len(), outcome));
                    }
                }
            }
            if self.design.auto_bandwidth {
                for (pi, runs) in stem_runs.iter().enumerate().filter(|(_, r)| !r.is_empty()) {
                    let mut best = 0;
                    for i in 1..runs.len() {
                        let (n, bn) = (runs[i].0, runs[best].0);
                        let g = self.design.kernels[i].gamma();
                        let bg = self.design.kernels[best].gamma();
                        if n > bn || (n == bn && g < bg) {
                            best = i;
                        }
                    }
                    tallies[self.cell_index(ai, None, pi)].record(&runs[best].1, Some(best));
                }
            }
        }
        Ok(())
    }
}

/// Runs every replication of `design` and aggregates per cell.
pub fn run_sweep(design: &SimulationDesign) -> Result<SweepResult> {
    design.validate()?;
    let specs = design.signals()?;
    let signals = specs
        .iter()
        .map(|s| synthesize_signal(s, design.dt))
        .collect::<Result<Vec<_>>>()?;
    let kernels = design
        .kernels
        .iter()
        .map(|k| k.build(design.dt))
        .collect::<Result<Vec<_>>>()?;
    let moments = design_moments(design, &kernels)?;
    let params = moments.iter().map(|m| PalmParams::new(*m)).collect();
    let regions = specs
        .iter()
        .map(|s| kernels.iter().map(|k| compute_regions(s, k)).collect())
        .collect();

    let labels = design.amplitude_labels();
    let mut keys = Vec::new();
    for a in &labels {
        for k in &design.kernels {
            for &procedure in &design.procedures {
                keys.push(CellKey {
                    amplitude: *a,
                    gamma: Some(k.gamma()),
                    procedure,
                });
            }
        }
    }
    if design.auto_bandwidth {
        for a in &labels {
            for &procedure in design.procedures.iter().filter(|p| is_stem(**p)) {
                keys.push(CellKey {
                    amplitude: *a,
                    gamma: None,
                    procedure,
                });
            }
        }
    }
    let ctx = Context {
        design: design.clone(),
        signals,
        kernels,
        moments: moments.clone(),
        params,
        regions,
        keys,
    };
    let empty: Vec<Tally> = ctx
        .keys
        .iter()
        .map(|k| Tally {
            chosen: if k.gamma.is_none() { vec![0; design.kernels.len()] } else { Vec::new() },
            ..Tally::default()
        })
        .collect();

    let reps = design.replications;
    let blocks: Vec<Vec<Tally>> = (0..reps.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut t = empty.clone();
            for r in b * BLOCK..((b + 1) * BLOCK).min(reps) {
                ctx.replicate(r as u64, &mut t)?;
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let mut total = empty;
    for block in &blocks {
        for (t, b) in total.iter_mut().zip(block) {
            t.merge(b);
        }
    }
    let peaks = design.signal.peaks.len();
    let cells = ctx
        .keys
        .iter()
        .zip(total)
        .map(|(key, tally)| SweepCell {
            key: *key,
            peaks,
            tally,
        })
        .collect();
    Ok(SweepResult {
        design: design.clone(),
        moments,
        cells,
    })
}
