//! File formats: single-column series CSV, JSON documents and the provenance
//! header every output carries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use stem_core::SampledSequence;

use crate::error::CliError;

/// Tool version, flags and seed of the invocation that wrote a file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
}

impl Provenance {
    /// `args` is the full argument list, program name included. The thread
    /// count is left out so outputs do not depend on it.
    pub fn new(args: &[String], seed: Option<u64>) -> Self {
        let mut kept = Vec::with_capacity(args.len());
        let mut skip = false;
        for a in args.iter().skip(1) {
            if skip {
                skip = false;
                continue;
            }
            if a == "--threads" {
                skip = true;
                continue;
            }
            if a.starts_with("--threads=") {
                continue;
            }
            kept.push(a.as_str());
        }
        Self {
            tool: "stem",
            version: env!("CARGO_PKG_VERSION"),
            command: format!("stem {}", kept.join(" ")),
            seed,
        }
    }

    /// `#`-prefixed lines for text outputs.
    pub fn header(&self) -> String {
        let mut out = format!("# {} {}\n# command: {}\n", self.tool, self.version, self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "# seed: {seed}");
        }
        out
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable output");
    text.push('\n');
    write_text(path, &text)
}

/// A parsed series file before its grid spacing is settled.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFile {
    pub values: Vec<f64>,
    pub dt: Option<f64>,
    pub t0: f64,
}

/// Parses one value per line. `#` lines may carry `dt=` and `t0=`; a
/// single non-numeric line before the first value is taken as a header.
/// When a line has several comma-separated fields the last one is used.
pub fn parse_series(text: &str, flag: &'static str) -> Result<SeriesFile, CliError> {
    let mut out = SeriesFile {
        values: Vec::new(),
        dt: None,
        t0: 0.0,
    };
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some(v) = token.strip_prefix("dt=") {
                    out.dt = Some(parse_number(v, flag, lineno)?);
                } else if let Some(v) = token.strip_prefix("t0=") {
                    out.t0 = parse_number(v, flag, lineno)?;
                }
            }
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.values.push(v),
            Ok(_) => {
                return Err(CliError::config(flag, format!("line {}: non-finite value", lineno + 1)))
            }
            Err(_) if out.values.is_empty() && !header_seen => header_seen = true,
            Err(_) => {
                return Err(CliError::config(
                    flag,
                    format!("line {}: `{field}` is not a number", lineno + 1),
                ))
            }
        }
    }
    if out.values.is_empty() {
        return Err(CliError::config(flag, "series file contains no values"));
    }
    Ok(out)
}

fn parse_number(v: &str, flag: &'static str, lineno: usize) -> Result<f64, CliError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| CliError::config(flag, format!("line {}: bad header value `{v}`", lineno + 1)))
}

/// Reads a series and reconciles its `dt=` header with the `--dt` flag.
/// Disagreement is a configuration error; so is having neither.
pub fn read_series(path: &Path, flag: &'static str, dt_flag: Option<f64>) -> Result<SampledSequence, CliError> {
    let file = parse_series(&read_text(path)?, flag)?;
    let dt = match (file.dt, dt_flag) {
        (Some(h), Some(f)) if !same_dt(h, f) => {
            return Err(CliError::config(
                "--dt",
                format!("{f} disagrees with dt={h} in {}", path.display()),
            ))
        }
        (_, Some(f)) => f,
        (Some(h), None) => h,
        (None, None) => {
            return Err(CliError::config(
                "--dt",
                format!("{} has no `# dt=` header; pass --dt", path.display()),
            ))
        }
    };
    if !(dt > 0.0) {
        return Err(CliError::config("--dt", format!("must be positive, got {dt}")));
    }
    SampledSequence::new(file.values, dt, file.t0).map_err(|e| CliError::config(flag, e.to_string()))
}

pub fn same_dt(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Provenance header, grid header, a `value` column.
pub fn series_csv(seq: &SampledSequence, provenance: &Provenance) -> String {
    let mut out = provenance.header();
    let _ = writeln!(out, "# dt={} t0={}", seq.dt(), seq.t0());
    out.push_str("value\n");
    for v in seq.values() {
        let _ = writeln!(out, "{v}");
    }
    out
}
