// SPDX-License-Identifier: MIT OR Apache-2.0

//! Replicated simulation studies on the two builtin models. Each
//! replication draws a path from its own seed, runs the pipeline and is
//! reduced to one flat row; rows come back in replication order whatever
//! the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::TestResult;
use crate::error::{CpdError, Result};
use crate::model::{builtin_model, DiffusionModel};
use crate::path::Path;
use crate::pipeline::{run_pipeline, Branch, DecisionReport, PipelineConfig};
use crate::rng;
use crate::simulate::{self, ParamSchedule, Scheme, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Situation {
    /// Drift constant.
    I,
    /// Drift changes away from the diffusion change point.
    Ii,
    /// Drift changes at the diffusion change point.
    Iii,
}

impl std::str::FromStr for Situation {
    type Err = CpdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" | "1" => Ok(Situation::I),
            "ii" | "2" => Ok(Situation::Ii),
            "iii" | "3" => Ok(Situation::Iii),
            other => Err(CpdError::invalid(format!("unknown situation `{other}` (expected i, ii or iii)"))),
        }
    }
}

/// A change size either fixed or shrinking as `n^{−c}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Magnitude {
    Fixed(f64),
    Power(f64),
}

impl Magnitude {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            Magnitude::Fixed(v) => *v,
            Magnitude::Power(c) => (n as f64).powf(-c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// `ou` (model 1) or `hyperbolic` (model 2).
    pub model: String,
    pub situation: Situation,
    pub n: usize,
    /// `h = n^{−h_exponent}`.
    pub h_exponent: f64,
    pub alpha_change: Magnitude,
    pub drift_change: Magnitude,
    pub reps: usize,
    pub base_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// `None` picks the exact sampler for OU and 32-substep Euler otherwise.
    pub scheme: Option<Scheme>,
    pub pipeline: PipelineConfig,
}

impl ExperimentSpec {
    /// OU: `x₀ = 2`, α 1 → 1 + δ at 0.8, β = (1, 2 − ϑ) → (1, 2) at 0.4
    /// (ii) or 0.8 (iii), `h = n^{−0.52}`, `ϑ = n^{−0.1}`.
    pub fn model1(situation: Situation, n: usize) -> Self {
        Self {
            model: "ou".into(),
            situation,
            n,
            h_exponent: 0.52,
            alpha_change: Magnitude::Fixed(0.2),
            drift_change: Magnitude::Power(0.1),
            reps: 100,
            base_seed: 1,
            threads: None,
            scheme: None,
            pipeline: PipelineConfig::default(),
        }
    }

    /// Hyperbolic: `x₀ = 1`, α 1 + δ → 1 at 0.4 with `δ = n^{−0.36}`,
    /// β = (1, 2) → (1 − ϑ, 2) at 0.7 (ii) or 0.4 (iii), `ϑ = 0.5`,
    /// `h = n^{−0.625}`.
    pub fn model2(situation: Situation, n: usize) -> Self {
        Self {
            model: "hyperbolic".into(),
            h_exponent: 0.625,
            alpha_change: Magnitude::Power(0.36),
            drift_change: Magnitude::Fixed(0.5),
            ..Self::model1(situation, n)
        }
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if self.reps == 0 {
            return Err(CpdError::invalid("reps must be ≥ 1"));
        }
        if self.n < 2 {
            return Err(CpdError::invalid("n must be ≥ 2"));
        }
        if self.threads == Some(0) {
            return Err(CpdError::invalid("threads must be ≥ 1"));
        }
        builtin_model(&self.model)?;
        self.pipeline.validate()?;
        let mut warnings = Vec::new();
        if !(self.h_exponent > 0.5 && self.h_exponent < 1.0) {
            warnings.push(format!(
                "h exponent {} outside (0.5, 1): nh → ∞ and nh² → 0 do not both hold",
                self.h_exponent
            ));
        }
        Ok(warnings)
    }

    pub fn h(&self) -> f64 {
        (self.n as f64).powf(-self.h_exponent)
    }

    pub fn truth(&self) -> Result<Truth> {
        let n = self.n;
        let da = self.alpha_change.value(n);
        let db = self.drift_change.value(n);
        let (x0, tau_alpha, alpha1, alpha2, beta1, beta2, tau_beta) = match self.model.as_str() {
            "ou" => {
                let tau_beta = match self.situation {
                    Situation::I => None,
                    Situation::Ii => Some(0.4),
                    Situation::Iii => Some(0.8),
                };
                let beta1 = if tau_beta.is_some() { vec![1.0, 2.0 - db] } else { vec![1.0, 2.0] };
                (2.0, 0.8, 1.0, 1.0 + da, beta1, vec![1.0, 2.0], tau_beta)
            }
            "hyperbolic" => {
                let tau_beta = match self.situation {
                    Situation::I => None,
                    Situation::Ii => Some(0.7),
                    Situation::Iii => Some(0.4),
                };
                let beta2 = if tau_beta.is_some() { vec![1.0 - db, 2.0] } else { vec![1.0, 2.0] };
                (1.0, 0.4, 1.0 + da, 1.0, vec![1.0, 2.0], beta2, tau_beta)
            }
            other => return Err(CpdError::invalid(format!("no experiment design for model `{other}`"))),
        };
        Ok(Truth {
            x0: vec![x0],
            tau_alpha,
            alpha1: vec![alpha1],
            alpha2: vec![alpha2],
            tau_beta,
            beta1,
            beta2,
            n,
            h: self.h(),
        })
    }

    pub fn schedule(&self) -> Result<ParamSchedule> {
        self.truth()?.schedule()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme.unwrap_or(if self.model == "ou" {
            Scheme::OuExact
        } else {
            Scheme::Euler { substeps: simulate::DEFAULT_SUBSTEPS }
        })
    }

    pub fn seed(&self, rep: usize) -> u64 {
        rng::replication_seed(self.base_seed, rep as u64)
    }

    /// The path of replication `rep`.
    pub fn simulate(&self, model: &dyn DiffusionModel, rep: usize) -> Result<Path> {
        let truth = self.truth()?;
        simulate::simulate(model, &truth.schedule()?, &truth.x0, self.n, self.h(), self.scheme(), self.seed(rep))
    }
}

/// Data-generating parameters of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub x0: Vec<f64>,
    pub n: usize,
    pub h: f64,
    pub tau_alpha: f64,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub tau_beta: Option<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl Truth {
    pub fn schedule(&self) -> Result<ParamSchedule> {
        let mut cuts: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
        let beta_at = |t: f64| match self.tau_beta {
            Some(tb) if t <= tb => self.beta1.clone(),
            Some(_) => self.beta2.clone(),
            None => self.beta1.clone(),
        };
        let alpha_at = |t: f64| if t <= self.tau_alpha { self.alpha1.clone() } else { self.alpha2.clone() };
        let mut ends = vec![self.tau_alpha, 1.0];
        if let Some(tb) = self.tau_beta {
            ends.push(tb);
        }
        ends.sort_by(|a, b| a.total_cmp(b));
        ends.dedup();
        for e in ends {
            cuts.push((e, alpha_at(e), beta_at(e)));
        }
        ParamSchedule::new(cuts.into_iter().map(|(end, alpha, beta)| Segment { end, alpha, beta }).collect())
    }
}

/// Flat per-replication summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub rep: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub branch: Option<String>,
    pub t_alpha: Option<f64>,
    pub t_alpha_reject: Option<bool>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub tau_alpha: Option<f64>,
    pub epsilon1: Option<f64>,
    pub tau_lower: Option<f64>,
    pub tau_upper: Option<f64>,
    pub t1_left: Option<f64>,
    pub t1_left_reject: Option<bool>,
    pub t2_left: Option<f64>,
    pub t2_left_reject: Option<bool>,
    pub t1_right: Option<f64>,
    pub t1_right_reject: Option<bool>,
    pub t2_right: Option<f64>,
    pub t2_right_reject: Option<bool>,
    pub beta_check1: Option<Vec<f64>>,
    pub beta_check2: Option<Vec<f64>>,
    pub beta_hat1: Option<Vec<f64>>,
    pub beta_hat2: Option<Vec<f64>>,
    pub tau_beta: Option<f64>,
    pub same_point: Option<f64>,
    pub same_point_reference: Option<f64>,
}

fn stat(t: &Option<TestResult>) -> (Option<f64>, Option<bool>) {
    t.as_ref().map_or((None, None), |t| (Some(t.statistic), Some(t.reject)))
}

impl Row {
    pub fn from_report(rep: usize, seed: u64, r: &DecisionReport) -> Self {
        let mut row = Row {
            rep,
            seed,
            branch: Some(r.branch.as_str().to_string()),
            t_alpha: Some(r.diffusion_test.statistic),
            t_alpha_reject: Some(r.diffusion_test.reject),
            alpha1: r.alpha1.as_ref().map(|e| e.alpha()[0]),
            alpha2: r.alpha2.as_ref().map(|e| e.alpha()[0]),
            tau_alpha: r.tau_alpha.as_ref().map(|t| t.tau_hat),
            epsilon1: r.exclusion.as_ref().map(|w| w.epsilon1),
            tau_lower: r.exclusion.as_ref().map(|w| w.tau_lower),
            tau_upper: r.exclusion.as_ref().map(|w| w.tau_upper),
            ..Default::default()
        };
        if let Some(l) = &r.drift_left {
            (row.t1_left, row.t1_left_reject) = stat(&l.tests.t1);
            (row.t2_left, row.t2_left_reject) = stat(&l.tests.t2);
            row.beta_check1 = Some(l.beta_check.beta().to_vec());
        }
        if let Some(rt) = &r.drift_right {
            (row.t1_right, row.t1_right_reject) = stat(&rt.tests.t1);
            (row.t2_right, row.t2_right_reject) = stat(&rt.tests.t2);
            row.beta_check2 = Some(rt.beta_check.beta().to_vec());
        }
        if let Some(dc) = &r.drift_change {
            row.beta_hat1 = dc.beta1.as_ref().map(|e| e.beta().to_vec());
            row.beta_hat2 = dc.beta2.as_ref().map(|e| e.beta().to_vec());
            row.tau_beta = dc.tau_beta.as_ref().map(|t| t.tau_hat);
        }
        if let Some(sp) = &r.same_point {
            row.same_point = Some(sp.statistic);
            row.same_point_reference = sp.reference_quantile;
        }
        row
    }

    pub fn branch(&self) -> Option<Branch> {
        self.branch.as_deref().and_then(|b| serde_json::from_value(serde_json::Value::String(b.to_string())).ok())
    }

    /// Column names, with vector fields expanded per coordinate.
    pub fn header(q: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "rep", "seed", "error", "branch", "t_alpha", "t_alpha_reject", "alpha1", "alpha2", "tau_alpha", "epsilon1",
            "tau_lower", "tau_upper", "t1_left", "t1_left_reject", "t2_left", "t2_left_reject", "t1_right",
            "t1_right_reject", "t2_right", "t2_right_reject",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for name in ["beta_check1", "beta_check2", "beta_hat1", "beta_hat2"] {
            h.extend((1..=q).map(|k| format!("{name}_{k}")));
        }
        h.extend(["tau_beta", "same_point", "same_point_reference"].iter().map(|s| s.to_string()));
        h
    }

    pub fn record(&self, q: usize) -> Vec<String> {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        let b = |v: Option<bool>| v.map_or(String::new(), |x| (x as u8).to_string());
        let mut r = vec![
            self.rep.to_string(),
            self.seed.to_string(),
            self.error.clone().unwrap_or_default(),
            self.branch.clone().unwrap_or_default(),
            f(self.t_alpha),
            b(self.t_alpha_reject),
            f(self.alpha1),
            f(self.alpha2),
            f(self.tau_alpha),
            f(self.epsilon1),
            f(self.tau_lower),
            f(self.tau_upper),
            f(self.t1_left),
            b(self.t1_left_reject),
            f(self.t2_left),
            b(self.t2_left_reject),
            f(self.t1_right),
            b(self.t1_right_reject),
            f(self.t2_right),
            b(self.t2_right_reject),
        ];
        for v in [&self.beta_check1, &self.beta_check2, &self.beta_hat1, &self.beta_hat2] {
            for k in 0..q {
                r.push(f(v.as_ref().and_then(|v| v.get(k).copied())));
            }
        }
        r.push(f(self.tau_beta));
        r.push(f(self.same_point));
        r.push(f(self.same_point_reference));
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub truth: Truth,
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
}

/// One replication: simulate, run the pipeline, keep the full report.
pub fn run_replication(spec: &ExperimentSpec, model: &dyn DiffusionModel, rep: usize) -> Result<DecisionReport> {
    let path = spec.simulate(model, rep)?;
    let mut cfg = spec.pipeline.clone();
    cfg.seed = rng::child_seed(spec.seed(rep), 0xb007);
    run_pipeline(&path, model, &cfg)
}

/// Runs `f(rep)` for every replication on the spec's worker pool and
/// returns results in replication order.
pub fn map_replications<T, F>(spec: &ExperimentSpec, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let go = || (0..spec.reps).into_par_iter().map(&f).collect::<Vec<T>>();
    match spec.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CpdError::invalid(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(go))
        }
        None => Ok(go()),
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let warnings = spec.validate()?;
    let truth = spec.truth()?;
    let model = builtin_model(&spec.model)?;
    let rows = map_replications(spec, |rep| {
        let seed = spec.seed(rep);
        match run_replication(spec, model.as_ref(), rep) {
            Ok(r) => Row::from_report(rep, seed, &r),
            Err(e) => Row { rep, seed, error: Some(e.to_string()), ..Default::default() },
        }
    })?;
    Ok(ExperimentResult { spec: spec.clone(), truth, rows, warnings })
}

/// Mean, standard deviation and count over the finite values of a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: Option<f64>,
    /// Absent when fewer than two values.
    pub sd: Option<f64>,
}

pub fn summarize(values: impl IntoIterator<Item = f64>) -> Summary {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    let count = v.len();
    if count == 0 {
        return Summary { count, mean: None, sd: None };
    }
    let mean = v.iter().sum::<f64>() / count as f64;
    let sd = (count >= 2).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt());
    Summary { count, mean: Some(mean), sd }
}

/// Share of `true` among the present values.
pub fn proportion(values: impl IntoIterator<Item = Option<bool>>) -> Option<f64> {
    let (mut yes, mut total) = (0usize, 0usize);
    for v in values.into_iter().flatten() {
        total += 1;
        yes += v as usize;
    }
    (total > 0).then(|| yes as f64 / total as f64)
}

/// Equal-width bins over `[lo, hi]`; returns `(left edge, right edge, count)`.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v.is_finite() && v >= lo && v <= hi && width > 0.0 {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts.into_iter().enumerate().map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c)).collect()
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
