// SPDX-License-Identifier: MIT OR Apache-2.0

//! `cpdiff`: simulation studies, path analysis and critical-value tables
//! for change-point detection in diffusions.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod config;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use diffusion_cpd::changepoint::{sample_limit_argmin, LimitLawConfig};
use diffusion_cpd::cusum::{critical_value_with_se, DriftTest, McConfig, CV_TABLE};
use diffusion_cpd::experiment::{map_replications, run_experiment, summarize};
use diffusion_cpd::io::{read_path_csv, write_path_csv};
use diffusion_cpd::model::builtin_model;
use diffusion_cpd::{run_pipeline, CpdError, PipelineConfig};
use serde::Serialize;

use crate::config::{read_json, resolve, ExperimentFlags};

#[derive(Debug, Parser)]
#[command(name = "cpdiff", version, about = "Change-point detection for discretely observed diffusions")]
struct Cli {
    /// Worker threads for replications and bootstrap.
    #[arg(long, global = true, env = "DIFFCP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate replication paths to CSV with a manifest.
    Simulate(ExperimentFlags),
    /// Run the detection procedure on one path CSV.
    Analyze(AnalyzeArgs),
    /// Replicated simulation study with aggregates and figure data.
    Experiment(ExperimentFlags),
    /// Tabulate upper points of the Brownian bridge supremum.
    CriticalValues(CriticalArgs),
    /// Sample the change-point limit law.
    LimitLaw(LimitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, clap::Args)]
struct AnalyzeArgs {
    /// Path CSV with header `t,x1,...,xd`.
    input: PathBuf,
    #[arg(long, default_value = "ou")]
    model: String,
    /// JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    level: Option<f64>,
    /// `t1`, `t2`, `either` or `both`.
    #[arg(long, value_parser = parse_drift_test)]
    drift_test: Option<DriftTest>,
    #[arg(long)]
    bootstrap_reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Also write report.json and report.txt here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct CriticalArgs {
    /// Bridge dimensions.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    k: Vec<usize>,
    /// Upper tail probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    grid: usize,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, default_value_t = 20_240_101)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct LimitArgs {
    #[arg(long, default_value_t = 1.0)]
    j: f64,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long, default_value_t = 0x11a7)]
    seed: u64,
    /// CSV of draws; only the summary is printed when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_drift_test(s: &str) -> std::result::Result<DriftTest, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown drift test `{s}`"))
}

/// Error kinds that pick the exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CpdError>() {
            return match e.root() {
                CpdError::InvalidInput(_) | CpdError::OutOfBounds { .. } | CpdError::Json(_) => 1,
                CpdError::Data { .. } | CpdError::DimensionMismatch { .. } | CpdError::Io(_) => 2,
                _ => 3,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == Some(0) {
        bail!(CpdError::InvalidInput("threads must be ≥ 1".into()));
    }
    if let Some(t) = cli.threads {
        // ignore a pool that was already built, as in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::Simulate(flags) => simulate(&flags, cli.threads),
        Command::Analyze(args) => analyze(&args),
        Command::Experiment(flags) => experiment(&flags, cli.threads),
        Command::CriticalValues(args) => critical_values(&args),
        Command::LimitLaw(args) => limit_law(&args),
    }
}

fn out_dir(out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.ok_or_else(|| CpdError::InvalidInput("an output directory is required (--out)".into()))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ManifestEntry {
    rep: usize,
    seed: u64,
    file: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a diffusion_cpd::experiment::ExperimentSpec,
    truth: diffusion_cpd::experiment::Truth,
    scheme: diffusion_cpd::simulate::Scheme,
    replications: Vec<ManifestEntry>,
    warnings: Vec<String>,
}

fn simulate(flags: &ExperimentFlags, threads: Option<usize>) -> Result<()> {
    let resolved = resolve(flags, threads)?;
    let spec = resolved.spec;
    let warnings = spec.validate()?;
    let dir = out_dir(resolved.out)?;
    let model = builtin_model(&spec.model)?;
    let files = map_replications(&spec, |rep| -> Result<ManifestEntry> {
        let path = spec.simulate(model.as_ref(), rep)?;
        let file = format!("path_{rep:04}.csv");
        let f = fs::File::create(dir.join(&file)).with_context(|| format!("creating {file}"))?;
        write_path_csv(&path, std::io::BufWriter::new(f))?;
        Ok(ManifestEntry { rep, seed: spec.seed(rep), file })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let manifest = Manifest { truth: spec.truth()?, scheme: spec.scheme(), spec: &spec, replications: files, warnings };
    write_text(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    println!("wrote {} paths to {}", spec.reps, dir.display());
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let mut cfg: PipelineConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.level {
        cfg.level = v;
    }
    if let Some(v) = args.drift_test {
        cfg.drift_test = v;
    }
    if let Some(v) = args.bootstrap_reps {
        cfg.bootstrap_reps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let model = builtin_model(&args.model)?;
    let file = fs::File::open(&args.input).map_err(CpdError::Io).with_context(|| format!("opening {}", args.input.display()))?;
    let path = read_path_csv(std::io::BufReader::new(file), Some(model.state_dim()))
        .with_context(|| format!("reading {}", args.input.display()))?;
    let report = run_pipeline(&path, model.as_ref(), &cfg)?;
    let json = report.to_json()? + "\n";
    let text = report.to_text();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join("report.json"), &json)?;
        write_text(&dir.join("report.txt"), &text)?;
    }
    let mut stdout = std::io::stdout().lock();
    match args.format {
        Format::Text => stdout.write_all(text.as_bytes())?,
        Format::Json => stdout.write_all(json.as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    spec: &'a diffusion_cpd::experiment::ExperimentSpec,
    truth: &'a diffusion_cpd::experiment::Truth,
    warnings: Vec<String>,
    failures: usize,
    aggregates: Vec<report::Aggregate>,
}

fn experiment(flags: &ExperimentFlags, threads: Option<usize>) -> Result<()> {
    let resolved = resolve(flags, threads)?;
    let dir = out_dir(resolved.out)?;
    let result = run_experiment(&resolved.spec)?;
    let q = builtin_model(&result.spec.model)?.beta_dim();
    report::write_rows(&dir.join("rows.csv"), &result.rows, q)?;
    let aggregates = report::aggregates(&result.rows);
    report::write_aggregates(&dir.join("aggregates.csv"), &aggregates)?;
    let mut warnings = result.warnings.clone();
    if result.spec.reps == 1 {
        warnings.push("a single replication: standard deviations are empty".into());
    }
    warnings.extend(report::write_figures(&dir, &result)?);
    let failures = result.rows.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        warnings.push(format!("{failures} replications failed; aggregates use the rest"));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let summary = ExperimentSummary { spec: &result.spec, truth: &result.truth, warnings, failures, aggregates };
    write_text(&dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{} replications, {failures} failed; results in {}", result.rows.len(), dir.display())?;
    for a in summary.aggregates.iter().filter(|a| a.quantity.ends_with("_reject") || a.quantity.starts_with("branch:")) {
        writeln!(out, "{:<28} {}", a.quantity, a.mean.map_or("n/a".into(), |m| format!("{m:.3}")))?;
    }
    Ok(())
}

fn critical_values(args: &CriticalArgs) -> Result<()> {
    let mc = McConfig { grid: args.grid, reps: args.reps, seed: args.seed };
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        w.write_record(["k", "eps", "value", "se", "table"])?;
        for &k in &args.k {
            for &eps in &args.eps {
                let (value, se) = critical_value_with_se(k, eps, &mc)?;
                let table = CV_TABLE.iter().find(|t| t.0 == k && t.1 == eps).map_or(String::new(), |t| t.2.to_string());
                w.write_record([k.to_string(), eps.to_string(), format!("{value:.6}"), format!("{se:.6}"), table])?;
            }
        }
        w.flush()?;
    }
    match &args.out {
        Some(p) => fs::write(p, &buf).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

fn limit_law(args: &LimitArgs) -> Result<()> {
    let cfg = LimitLawConfig { reps: args.reps, v_max: args.v_max, grid_step: args.grid_step, seed: args.seed };
    let sample = sample_limit_argmin(args.j, &cfg)?;
    if let Some(p) = &args.out {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(p)
            .with_context(|| format!("creating {}", p.display()))?;
        w.write_record(["draw"])?;
        for d in &sample.draws {
            w.write_record([format!("{d:.16e}")])?;
        }
        w.flush()?;
    }
    let s = summarize(sample.draws.iter().copied());
    let mut sorted = sample.draws.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    println!(
        "J = {}  draws = {}  mean = {:.4}  sd = {:.4}  median = {median:.4}  boundary fraction = {:.4}",
        args.j,
        s.count,
        s.mean.unwrap_or(f64::NAN),
        s.sd.unwrap_or(f64::NAN),
        sample.boundary_fraction
    );
    for f in &sample.flags {
        eprintln!("warning: {f}");
    }
    Ok(())
}
