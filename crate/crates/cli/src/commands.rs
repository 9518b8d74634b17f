use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use stem_core::evaluation::{preset, run_sweep, SimulationDesign};
use stem_core::{
    auto_bandwidth, closed_form_moments, convolve, estimate_moments, estimate_template as template_from,
    gaussian_kernel, generate_noise_with, quartic_kernel, stem_detect, stream_rng, synthesize_signal,
    DetectionReport, GaussianAcvfParams, Kernel, KernelFamily, NoiseMoments, SampledSequence,
    StemProcedure,
};

use crate::error::{CliError, Flag};
use crate::io::{self, same_dt, Provenance};
use crate::{
    DetectArgs, EstimateNoiseArgs, EstimateTemplateArgs, GenerateArgs, KernelArgs, KernelChoice,
    ProcedureChoice, SimulateArgs,
};

#[derive(Debug, Serialize)]
struct KernelInfo {
    family: KernelFamily,
    gamma: Option<f64>,
    truncation: Option<f64>,
    samples: usize,
}

fn kernel_info(k: &Kernel, args: &KernelArgs) -> KernelInfo {
    KernelInfo {
        family: k.family(),
        gamma: (k.family() != KernelFamily::Template).then(|| k.bandwidth()),
        truncation: (k.family() == KernelFamily::Gaussian).then_some(args.truncation),
        samples: k.len(),
    }
}

/// One kernel per `--gamma` value, or the template. The template's grid must
/// match the series.
fn build_kernels(args: &KernelArgs, dt: f64) -> Result<Vec<Kernel>, CliError> {
    match args.kernel {
        KernelChoice::Template => {
            if !args.gamma.is_empty() {
                return Err(CliError::config("--gamma", "not used with --kernel template"));
            }
            let path = args
                .template_file
                .as_deref()
                .ok_or_else(|| CliError::config("--template-file", "required with --kernel template"))?;
            let k = Kernel::from_csv(&io::read_text(path)?)
                .map_err(|e| CliError::config("--template-file", e.to_string()))?;
            if !same_dt(k.dt(), dt) {
                return Err(CliError::config(
                    "--template-file",
                    format!("template dt={} but series dt={dt}", k.dt()),
                ));
            }
            Ok(vec![k])
        }
        family => {
            if args.template_file.is_some() {
                return Err(CliError::config("--template-file", "only used with --kernel template"));
            }
            if args.gamma.is_empty() {
                return Err(CliError::config("--gamma", "required for gaussian and quartic kernels"));
            }
            args.gamma
                .iter()
                .map(|&g| {
                    if family == KernelChoice::Gaussian {
                        gaussian_kernel(g, args.truncation, dt)
                    } else {
                        quartic_kernel(g, dt)
                    }
                    .map_err(|e| CliError::config("--gamma", e.to_string()))
                })
                .collect()
        }
    }
}

fn calibrate(noise: &SampledSequence, kernel: &Kernel, flag: &'static str) -> Result<NoiseMoments, CliError> {
    estimate_moments(&convolve(noise, kernel).flag(flag)?).flag(flag)
}

fn detection_moments(args: &DetectArgs, kernels: &[Kernel], dt: f64) -> Result<Vec<NoiseMoments>, CliError> {
    if let Some(path) = &args.moments {
        if kernels.len() > 1 {
            return Err(CliError::config(
                "--moments",
                "one moments file cannot serve several bandwidths; use --calibration or --noise-sigma",
            ));
        }
        let m: NoiseMoments = serde_json::from_str(&io::read_text(path)?)
            .map_err(|e| CliError::config("--moments", e.to_string()))?;
        return Ok(vec![m]);
    }
    if let Some(path) = &args.calibration {
        let noise = io::read_series(path, "--calibration", args.dt)?;
        if !same_dt(noise.dt(), dt) {
            return Err(CliError::config(
                "--calibration",
                format!("calibration dt={} but series dt={dt}", noise.dt()),
            ));
        }
        return kernels.iter().map(|k| calibrate(&noise, k, "--calibration")).collect();
    }
    let sigma = args.noise_sigma.expect("clap requires one noise source");
    if args.kernel.kernel != KernelChoice::Gaussian {
        return Err(CliError::config(
            "--noise-sigma",
            "closed-form moments exist only for the gaussian kernel",
        ));
    }
    let params = GaussianAcvfParams::new(sigma, args.noise_nu).flag("--noise-sigma")?;
    kernels
        .iter()
        .map(|k| closed_form_moments(&params, k.bandwidth()).flag("--noise-sigma"))
        .collect()
}

#[derive(Serialize)]
struct DetectOutput<'a> {
    provenance: &'a Provenance,
    kernel: KernelInfo,
    /// Bandwidths considered when several were given.
    candidate_gammas: Vec<f64>,
    moments: NoiseMoments,
    report: &'a DetectionReport,
}

pub fn detect(args: &DetectArgs, argv: &[String]) -> Result<(), CliError> {
    let input = io::read_series(&args.input, "--input", args.dt)?;
    let kernels = build_kernels(&args.kernel, input.dt())?;
    let moments = detection_moments(args, &kernels, input.dt())?;
    let procedure = match args.procedure {
        ProcedureChoice::Bonferroni => StemProcedure::Bonferroni,
        ProcedureChoice::Bh => StemProcedure::BenjaminiHochberg,
    };
    let (chosen, output) = if kernels.len() == 1 {
        (0, stem_detect(&input, &kernels[0], &moments[0], procedure, args.alpha).flag("--alpha")?)
    } else {
        let a = auto_bandwidth(&input, &kernels, &moments, procedure, args.alpha).flag("--alpha")?;
        (a.chosen_index, a.output)
    };
    let provenance = Provenance::new(argv, None);
    let report = &output.report;
    let kernel = &kernels[chosen];

    if let Some(path) = &args.report {
        let doc = DetectOutput {
            provenance: &provenance,
            kernel: kernel_info(kernel, &args.kernel),
            candidate_gammas: if kernels.len() > 1 { args.kernel.gamma.clone() } else { Vec::new() },
            moments: moments[chosen],
            report,
        };
        io::write_json(path, &doc)?;
    }
    if let Some(path) = &args.peaks {
        io::write_text(path, &(provenance.header() + &report.rejected_csv()))?;
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "procedure: {}", report.procedure.name());
    match kernel.family() {
        KernelFamily::Template => {
            let _ = writeln!(summary, "kernel: template ({} samples)", kernel.len());
        }
        f => {
            let name = if f == KernelFamily::Gaussian { "gaussian" } else { "quartic" };
            let _ = writeln!(summary, "kernel: {name} gamma={}", kernel.bandwidth());
        }
    }
    let _ = writeln!(summary, "local maxima tested: {}", report.m_tilde);
    let _ = writeln!(summary, "rejections: {}", report.rejection_count());
    let _ = writeln!(summary, "p-value cutoff: {}", report.pvalue_cutoff);
    let _ = writeln!(summary, "height threshold: {}", report.height_threshold);
    print!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct NoiseOutput {
    sigma2: f64,
    lambda2: f64,
    lambda4: f64,
    kernel: KernelInfo,
    samples: usize,
    provenance: Provenance,
}

pub fn estimate_noise(args: &EstimateNoiseArgs, argv: &[String]) -> Result<(), CliError> {
    let input = io::read_series(&args.input, "--input", args.dt)?;
    let kernels = build_kernels(&args.kernel, input.dt())?;
    if kernels.len() != 1 {
        return Err(CliError::config("--gamma", "give a single bandwidth"));
    }
    let m = calibrate(&input, &kernels[0], "--input")?;
    let out = NoiseOutput {
        sigma2: m.sigma2(),
        lambda2: m.lambda2(),
        lambda4: m.lambda4(),
        kernel: kernel_info(&kernels[0], &args.kernel),
        samples: input.len(),
        provenance: Provenance::new(argv, None),
    };
    io::write_json(&args.output, &out)?;
    println!("sigma2: {}\nlambda2: {}\nlambda4: {}", out.sigma2, out.lambda2, out.lambda4);
    Ok(())
}

fn load_design(preset_name: Option<&str>, design: Option<&Path>) -> Result<SimulationDesign, CliError> {
    match (preset_name, design) {
        (_, Some(path)) => serde_json::from_str(&io::read_text(path)?)
            .map_err(|e| CliError::config("--design", e.to_string())),
        (name, None) => preset(name.unwrap_or("sim31")).flag("--preset"),
    }
}

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    let mut design = load_design(args.preset.as_deref(), args.design.as_deref())?;
    design.seed = args.seed;
    if let Some(r) = args.replications {
        design.replications = r;
    }
    let flag = if args.design.is_some() { "--design" } else { "--preset" };
    design.validate().flag(flag)?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::config("--threads", "must be at least 1"));
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = run_sweep(&design).flag(flag)?;
    let provenance = Provenance::new(argv, Some(args.seed));
    io::write_text(&args.output, &(provenance.header() + &result.to_csv()))?;
    if let Some(dir) = &args.emit_figure_data {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, table) in result.plot_tables().flag("--emit-figure-data")? {
            io::write_text(&dir.join(name), &(provenance.header() + &table))?;
        }
    }
    println!(
        "{}: {} cells, {} replications each",
        design.name,
        result.cells.len(),
        design.replications
    );
    Ok(())
}

pub fn estimate_template(args: &EstimateTemplateArgs, argv: &[String]) -> Result<(), CliError> {
    let input = io::read_series(&args.input, "--input", args.dt)?;
    let kernel = template_from(&input, args.threshold, args.window).flag("--threshold")?;
    let provenance = Provenance::new(argv, None);
    io::write_text(&args.output, &(provenance.header() + &kernel.to_csv()))?;
    println!("template: {} samples, center {}", kernel.len(), kernel.center());
    Ok(())
}

pub fn generate(args: &GenerateArgs, argv: &[String]) -> Result<(), CliError> {
    let design = load_design(args.preset.as_deref(), args.design.as_deref())?;
    let flag = if args.design.is_some() { "--design" } else { "--preset" };
    design.validate().flag(flag)?;
    let mut spec = design.signal.clone();
    if let Some(a) = args.amplitude {
        for p in &mut spec.peaks {
            p.amplitude = a;
        }
        spec.validate().flag("--amplitude")?;
    }
    let mut rng = stream_rng(args.seed, 0);
    let params = design.noise_params();
    let series = if args.noise_only {
        let n = args.samples.unwrap_or_else(|| spec.grid_len(design.dt));
        generate_noise_with(&params, 0.0, n, design.dt, &mut rng).flag("--samples")?
    } else {
        let mu = synthesize_signal(&spec, design.dt).flag(flag)?;
        let z = generate_noise_with(&params, 0.0, mu.len(), design.dt, &mut rng).flag(flag)?;
        let z = SampledSequence::new(z.into_values(), mu.dt(), mu.t0()).flag(flag)?;
        mu.add(&z).flag(flag)?
    };
    let provenance = Provenance::new(argv, Some(args.seed));
    io::write_text(&args.output, &io::series_csv(&series, &provenance))?;
    if let Some(path) = &args.truth {
        let mut out = provenance.header();
        out.push_str("peak,center,amplitude,support_lo,support_hi\n");
        for (j, p) in spec.peaks.iter().enumerate() {
            let s = p.support();
            let _ = writeln!(out, "{j},{},{},{},{}", p.center, p.amplitude, s.lo, s.hi);
        }
        io::write_text(path, &out)?;
    }
    println!("{} samples at dt={}", series.len(), series.dt());
    Ok(())
}
