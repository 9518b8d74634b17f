//! `stem`: peak detection on sampled series, noise and template estimation,
//! and simulation sweeps.

mod commands;
mod error;
mod io;

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "stem", version, about = "Detect peaks by smoothing and testing local maxima")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth a series, test its local maxima and report the significant ones.
    Detect(DetectArgs),
    /// Estimate smoothed-noise moments from a pure-noise recording.
    EstimateNoise(EstimateNoiseArgs),
    /// Run a simulation design and write per-cell error and power estimates.
    Simulate(SimulateArgs),
    /// Average spikes aligned at their maxima into a kernel.
    EstimateTemplate(EstimateTemplateArgs),
    /// Write a synthetic series drawn from a simulation design.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelChoice {
    Gaussian,
    Quartic,
    Template,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProcedureChoice {
    Bonferroni,
    Bh,
}

#[derive(Args, Debug)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    pub kernel: KernelChoice,
    /// Bandwidth; a comma-separated list selects one automatically.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    /// Gaussian cut-off in bandwidths.
    #[arg(long, default_value_t = 3.0)]
    pub truncation: f64,
    /// Kernel CSV written by `estimate-template`.
    #[arg(long)]
    pub template_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("noise").required(true).args(["moments", "calibration", "noise_sigma"])))]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Sample spacing; must agree with a `# dt=` header if both are given.
    #[arg(long)]
    pub dt: Option<f64>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Moments JSON from `estimate-noise`.
    #[arg(long)]
    pub moments: Option<PathBuf>,
    /// Pure-noise series to estimate moments from.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Closed-form moments for Gaussian kernels from this noise scale.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Width of the noise autocorrelation, with --noise-sigma.
    #[arg(long, default_value_t = 0.0, requires = "noise_sigma")]
    pub noise_nu: f64,
    #[arg(long, value_enum, default_value_t = ProcedureChoice::Bonferroni)]
    pub procedure: ProcedureChoice,
    #[arg(long)]
    pub alpha: f64,
    /// Detection report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Rejected peaks CSV.
    #[arg(long)]
    pub peaks: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EstimateNoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub dt: Option<f64>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "design"])))]
pub struct SimulateArgs {
    /// One of sim31, sim32, sim34, sim35.
    #[arg(long)]
    pub preset: Option<String>,
    /// Design JSON.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
    /// Directory for the plotting tables.
    #[arg(long)]
    pub emit_figure_data: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "STEM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EstimateTemplateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Minimum height of a spike maximum.
    #[arg(long)]
    pub threshold: f64,
    /// Template length in samples.
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").args(["preset", "design"])))]
pub struct GenerateArgs {
    /// Design preset; sim31 when neither this nor --design is given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    /// Amplitude given to every peak.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Write noise without the signal.
    #[arg(long)]
    pub noise_only: bool,
    /// Series length with --noise-only; defaults to the design grid.
    #[arg(long, requires = "noise_only")]
    pub samples: Option<usize>,
    /// CSV of the embedded peaks.
    #[arg(long, conflicts_with = "noise_only")]
    pub truth: Option<PathBuf>,
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&args);
    let result = match cli.command {
        Command::Detect(a) => commands::detect(&a, &args),
        Command::EstimateNoise(a) => commands::estimate_noise(&a, &args),
        Command::Simulate(a) => commands::simulate(&a, &args),
        Command::EstimateTemplate(a) => commands::estimate_template(&a, &args),
        Command::Generate(a) => commands::generate(&a, &args),
    };
    if let Err(e) = result {
        eprintln!("stem: {e}");
        std::process::exit(e.exit_code());
    }
}
