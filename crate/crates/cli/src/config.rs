// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment and pipeline configuration files.
//!
//! A configuration file is one JSON object. Every key is optional and
//! unknown keys are rejected. Values are layered: the built-in design for
//! `model`/`situation`/`n`, then the file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use diffusion_cpd::experiment::{ExperimentSpec, Magnitude, Situation};
use diffusion_cpd::simulate::Scheme;
use diffusion_cpd::PipelineConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub model: Option<String>,
    pub situation: Option<Situation>,
    pub n: Option<usize>,
    pub h_exponent: Option<f64>,
    pub alpha_change: Option<Magnitude>,
    pub drift_change: Option<Magnitude>,
    pub reps: Option<usize>,
    pub base_seed: Option<u64>,
    pub threads: Option<usize>,
    pub scheme: Option<Scheme>,
    pub pipeline: Option<PipelineConfig>,
    pub out: Option<PathBuf>,
}

/// Command-line overrides, already parsed.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct ExperimentFlags {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `ou` or `hyperbolic`.
    #[arg(long)]
    pub model: Option<String>,
    /// `i`, `ii` or `iii`.
    #[arg(long)]
    pub situation: Option<Situation>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Step size exponent: `h = n^(-e)`.
    #[arg(long)]
    pub h_exponent: Option<f64>,
    /// `fixed:<v>` or `power:<c>` (size `n^(-c)`).
    #[arg(long, value_parser = parse_magnitude)]
    pub alpha_change: Option<Magnitude>,
    #[arg(long, value_parser = parse_magnitude)]
    pub drift_change: Option<Magnitude>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `exact` (OU only) or `euler:<substeps>`.
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    /// Bootstrap size for the same-point reference; 0 disables it.
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_magnitude(s: &str) -> std::result::Result<Magnitude, String> {
    let (kind, value) = s.split_once(':').ok_or_else(|| format!("expected fixed:<v> or power:<c>, got `{s}`"))?;
    let v: f64 = value.parse().map_err(|_| format!("`{value}` is not a number"))?;
    match kind {
        "fixed" => Ok(Magnitude::Fixed(v)),
        "power" => Ok(Magnitude::Power(v)),
        _ => Err(format!("unknown change kind `{kind}`")),
    }
}

pub fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    if s == "exact" {
        return Ok(Scheme::OuExact);
    }
    match s.split_once(':') {
        Some(("euler", k)) => k.parse().map(|substeps| Scheme::Euler { substeps }).map_err(|_| format!("bad substeps `{k}`")),
        _ => Err(format!("expected exact or euler:<substeps>, got `{s}`")),
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Resolved experiment: the spec plus where to write.
pub struct Resolved {
    pub spec: ExperimentSpec,
    pub out: Option<PathBuf>,
}

pub fn resolve(flags: &ExperimentFlags, threads: Option<usize>) -> Result<Resolved> {
    let file: ExperimentFile = match &flags.config {
        Some(p) => read_json(p)?,
        None => ExperimentFile::default(),
    };
    let model = flags.model.clone().or(file.model).unwrap_or_else(|| "ou".into());
    let situation = flags.situation.or(file.situation).unwrap_or(Situation::I);
    let n = flags.n.or(file.n).unwrap_or(100_000);
    let mut spec = match model.as_str() {
        "ou" => ExperimentSpec::model1(situation, n),
        "hyperbolic" => ExperimentSpec::model2(situation, n),
        other => bail!(diffusion_cpd::CpdError::InvalidInput(format!("no experiment design for model `{other}`"))),
    };
    macro_rules! layer {
        ($field:ident, $flag:expr) => {
            if let Some(v) = file.$field {
                spec.$field = v;
            }
            if let Some(v) = $flag {
                spec.$field = v;
            }
        };
    }
    layer!(h_exponent, flags.h_exponent);
    layer!(alpha_change, flags.alpha_change);
    layer!(drift_change, flags.drift_change);
    layer!(reps, flags.reps);
    layer!(base_seed, flags.seed);
    if let Some(p) = file.pipeline {
        spec.pipeline = p;
    }
    spec.scheme = flags.scheme.or(file.scheme);
    spec.threads = file.threads.or(threads);
    if let Some(b) = flags.bootstrap_reps {
        spec.pipeline.bootstrap_reps = b;
    }
    if let Some(l) = flags.level {
        spec.pipeline.level = l;
    }
    Ok(Resolved { spec, out: flags.out.clone().or(file.out) })
}
