//! Detection of peaks in one-dimensional signals by kernel smoothing and
//! multiple testing of the local maxima of the smoothed sequence.
//!
//! A local maximum of height `u` receives the p-value `F(u)`, the tail of the
//! height distribution of a local maximum of smoothed Gaussian noise. The
//! p-values are then corrected with Bonferroni or Benjamini–Hochberg.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod grid_signal;
pub mod kernels;
pub mod multiple_testing;
pub mod noise_model;
pub mod normal;
pub mod palm;
pub mod stem;

pub use error::{Result, StemError};
pub use grid_signal::{
    compute_regions, synthesize_signal, Interval, IntervalSet, PeakShape, PeakSpec, Region,
    RegionSet, SampledSequence, SignalSpec,
};
pub use kernels::{convolve, estimate_template, gaussian_kernel, quartic_kernel, Kernel, KernelFamily};
pub use multiple_testing::{
    asymptotic_thresholds, benjamini_hochberg, bonferroni, AsymptoticThresholds, Candidate,
    CandidateSet, DetectionReport, Procedure,
};
pub use noise_model::{
    closed_form_moments, estimate_moments, generate_noise, generate_noise_with, stream_rng,
    GaussianAcvfParams, NoiseMoments,
};
pub use palm::{candidate_pvalues, expected_maxima_density, palm_quantile, palm_survival, PalmParams};
pub use stem::{auto_bandwidth, find_local_maxima, stem_detect, AutoBandwidth, StemOutput, StemProcedure};
