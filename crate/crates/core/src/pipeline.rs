// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end procedure on one path: diffusion change test, localization,
//! exclusion window, drift tests on both sides, then either drift change
//! localization or the same-point diagnostic.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{self, ChangePointEstimate, EpsilonRule, ExclusionWindow};
use crate::cusum::{self, CvSource, DriftTest, DriftTests, Side, TestResult};
use crate::error::{CpdError, Result, StepContext};
use crate::estimate::{self, ExpansionConfig, IntervalEstimate, Role};
use crate::model::DiffusionModel;
use crate::optim::OptimizerConfig;
use crate::path::{Interval, Path};
use crate::rng;
use crate::simulate::{self, ParamSchedule, Scheme, Segment};

pub const MIN_OBSERVATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub level: f64,
    pub drift_test: DriftTest,
    pub fractions: Vec<f64>,
    pub min_margin: usize,
    pub epsilon_rule: EpsilonRule,
    /// No-change bootstrap size for the same-point reference; 0 disables it.
    pub bootstrap_reps: usize,
    /// Generator for bootstrap paths; `None` picks the exact sampler for
    /// the OU model and 32-substep Euler otherwise.
    pub bootstrap_scheme: Option<Scheme>,
    pub critical_values: CvSource,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub keep_profiles: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            level: 0.05,
            drift_test: DriftTest::Either,
            fractions: estimate::DEFAULT_FRACTIONS.to_vec(),
            min_margin: 50,
            epsilon_rule: EpsilonRule::default(),
            bootstrap_reps: 200,
            bootstrap_scheme: None,
            critical_values: CvSource::Table,
            optimizer: OptimizerConfig::default(),
            seed: 0xc0ffee,
            keep_profiles: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CpdError::invalid(format!("level must lie in (0, 1), got {}", self.level)));
        }
        estimate::validate_fractions(&self.fractions)
    }

    fn expansion(&self) -> ExpansionConfig {
        ExpansionConfig {
            fractions: self.fractions.clone(),
            min_margin: self.min_margin,
            level: self.level,
            drift_test: self.drift_test,
            optimizer: self.optimizer.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Neither drift window shows a change and the same-point statistic
    /// stays below its reference.
    NoChange,
    DriftChangeLeft,
    DriftChangeRight,
    SamePointSuspected,
    /// The global diffusion test did not reject; nothing further is run.
    DiffusionChangeNotDetected,
    /// The diffusion change was detected but no expansion split localized it.
    Unlocalizable,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::NoChange => "no-change",
            Branch::DriftChangeLeft => "drift-change-left",
            Branch::DriftChangeRight => "drift-change-right",
            Branch::SamePointSuspected => "same-point-suspected",
            Branch::DiffusionChangeNotDetected => "diffusion-change-not-detected",
            Branch::Unlocalizable => "unlocalizable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSide {
    pub side: Side,
    pub window: Interval,
    /// `β̌` on the whole window with the side's `α̂`.
    pub beta_check: IntervalEstimate,
    pub tests: DriftTests,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftChange {
    pub side: Side,
    pub split_used: Option<f64>,
    pub beta1: Option<IntervalEstimate>,
    pub beta2: Option<IntervalEstimate>,
    pub tau_beta: Option<ChangePointEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamePoint {
    pub statistic: f64,
    /// Upper-ε bootstrap quantile under no drift change (heuristic).
    pub reference_quantile: Option<f64>,
    pub bootstrap_reps: usize,
    pub bootstrap_failures: usize,
    pub exceeds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub model: String,
    pub n: usize,
    pub h: f64,
    pub horizon: f64,
    pub level: f64,
    pub branch: Branch,
    pub alpha_full: IntervalEstimate,
    pub diffusion_test: TestResult,
    pub alpha_split_used: Option<f64>,
    pub alpha1: Option<IntervalEstimate>,
    pub alpha2: Option<IntervalEstimate>,
    pub tau_alpha: Option<ChangePointEstimate>,
    pub exclusion: Option<ExclusionWindow>,
    pub drift_left: Option<DriftSide>,
    pub drift_right: Option<DriftSide>,
    pub drift_change: Option<DriftChange>,
    pub same_point: Option<SamePoint>,
    pub flags: Vec<String>,
}

impl DecisionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt_vec = |v: &[f64]| v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "model {}  n = {}  h = {:.3e}  T = {:.3}", self.model, self.n, self.h, self.horizon);
        let t = &self.diffusion_test;
        let _ = writeln!(
            s,
            "diffusion test: T = {:.4} vs {:.4} at level {} -> {}",
            t.statistic,
            t.critical_value,
            t.level,
            if t.reject { "change" } else { "no change" }
        );
        if let (Some(a1), Some(a2)) = (&self.alpha1, &self.alpha2) {
            let _ = writeln!(
                s,
                "alpha1 = [{}] on ({}, {}], alpha2 = [{}] on ({}, {}] (split {})",
                fmt_vec(a1.alpha()),
                a1.interval.lo,
                a1.interval.hi,
                fmt_vec(a2.alpha()),
                a2.interval.lo,
                a2.interval.hi,
                self.alpha_split_used.unwrap_or(f64::NAN)
            );
        }
        if let Some(tau) = &self.tau_alpha {
            let _ = writeln!(s, "tau_alpha = {:.5} (index {})", tau.tau_hat, tau.index_hat);
        }
        if let Some(w) = &self.exclusion {
            let _ = writeln!(s, "excluded ({:.5}, {:.5}), epsilon1 = {:.4}", w.tau_lower, w.tau_upper, w.epsilon1);
        }
        for side in [&self.drift_left, &self.drift_right].into_iter().flatten() {
            let _ = write!(s, "drift {:?} ({}, {}]:", side.side, side.window.lo, side.window.hi);
            for t in [&side.tests.t1, &side.tests.t2].into_iter().flatten() {
                let _ = write!(s, " {:?} = {:.4} vs {:.4};", t.test, t.statistic, t.critical_value);
            }
            let _ = writeln!(s, " beta = [{}]", fmt_vec(side.beta_check.beta()));
        }
        if let Some(dc) = &self.drift_change {
            if let (Some(b1), Some(b2)) = (&dc.beta1, &dc.beta2) {
                let _ = writeln!(s, "beta1 = [{}], beta2 = [{}]", fmt_vec(b1.beta()), fmt_vec(b2.beta()));
            }
            if let Some(tau) = &dc.tau_beta {
                let _ = writeln!(s, "tau_beta = {:.5} (index {})", tau.tau_hat, tau.index_hat);
            }
        }
        if let Some(sp) = &self.same_point {
            let _ = writeln!(
                s,
                "same-point statistic = {:.4}, bootstrap reference = {} (heuristic)",
                sp.statistic,
                sp.reference_quantile.map_or("n/a".to_string(), |q| format!("{q:.4}"))
            );
        }
        let _ = writeln!(s, "branch: {}", self.branch.as_str());
        for f in &self.flags {
            let _ = writeln!(s, "warning: {f}");
        }
        s
    }
}

fn collect_flags(flags: &mut Vec<String>, label: &str, items: &[String]) {
    flags.extend(items.iter().map(|f| format!("{label}: {f}")));
}

/// Runs the full procedure on `path`.
pub fn run_pipeline(path: &Path, model: &dyn DiffusionModel, cfg: &PipelineConfig) -> Result<DecisionReport> {
    cfg.validate()?;
    let n = path.n();
    if n < MIN_OBSERVATIONS {
        return Err(CpdError::invalid(format!(
            "insufficient data: need at least {MIN_OBSERVATIONS} increments, got {n}"
        )));
    }
    if path.dim() != model.state_dim() {
        return Err(CpdError::DimensionMismatch { what: "path dimension", expected: model.state_dim(), got: path.dim() });
    }
    let cv = &cfg.critical_values;
    let mut flags = Vec::new();

    // (1) diffusion change on [0, T]
    let alpha_full = estimate::estimate_alpha(path, model, path.full(), &cfg.optimizer).step("1 alpha estimate")?;
    collect_flags(&mut flags, "step 1", &alpha_full.flags);
    let diffusion_test =
        cusum::t_alpha(path, model, path.full(), alpha_full.alpha(), cfg.level, cv).step("1 diffusion test")?;
    let mut report = DecisionReport {
        model: model.name().to_string(),
        n,
        h: path.h(),
        horizon: path.horizon(),
        level: cfg.level,
        branch: Branch::DiffusionChangeNotDetected,
        alpha_full,
        diffusion_test,
        alpha_split_used: None,
        alpha1: None,
        alpha2: None,
        tau_alpha: None,
        exclusion: None,
        drift_left: None,
        drift_right: None,
        drift_change: None,
        same_point: None,
        flags: Vec::new(),
    };
    if !report.diffusion_test.reject {
        flags.push("no diffusion change detected; the no-diffusion-change procedure is out of scope".into());
        report.flags = flags;
        return Ok(report);
    }

    // (2)-(3) change-free margins for α̂₁, α̂₂
    let expansion = match estimate::expand_and_estimate(path, model, path.full(), &Role::Alpha, &cfg.expansion(), cv) {
        Ok(e) => e,
        Err(e @ (CpdError::NoChangeDetected | CpdError::WindowTooShort { .. })) => {
            flags.push(format!("diffusion change detected but unlocalizable: {e}"));
            report.branch = Branch::Unlocalizable;
            report.flags = flags;
            return Ok(report);
        }
        Err(e) => return Err(e).step("2-3 alpha expansion"),
    };
    collect_flags(&mut flags, "step 3", &expansion.first.flags);
    collect_flags(&mut flags, "step 3", &expansion.second.flags);
    let (a1, a2) = (expansion.first.alpha().to_vec(), expansion.second.alpha().to_vec());
    report.alpha_split_used = Some(expansion.split_used);
    report.alpha1 = Some(expansion.first);
    report.alpha2 = Some(expansion.second);

    // (4) τ̂^α
    let tau_alpha =
        changepoint::estimate_tau_alpha(path, model, &a1, &a2, cfg.keep_profiles).step("4 diffusion change point")?;
    collect_flags(&mut flags, "step 4", &tau_alpha.flags);
    let tau_hat = tau_alpha.tau_hat;
    report.tau_alpha = Some(tau_alpha);

    // (5) exclusion window
    let exclusion =
        match changepoint::exclusion_window(n, tau_hat, &a1, &a2, &cfg.epsilon_rule).step("5 exclusion window") {
            Ok(w) => w,
            Err(e) if a1 == a2 => {
                flags.push(format!("{e}"));
                report.branch = Branch::Unlocalizable;
                report.flags = flags;
                return Ok(report);
            }
            Err(e) => return Err(e),
        };
    collect_flags(&mut flags, "step 5", &exclusion.flags);

    // (6) drift tests on both sides of the excluded neighbourhood
    let left = drift_side(path, model, Side::Left, exclusion.tau_lower, &a1, cfg, &mut flags).step("6 left drift tests")?;
    let right =
        drift_side(path, model, Side::Right, exclusion.tau_upper, &a2, cfg, &mut flags).step("6 right drift tests")?;
    report.exclusion = Some(exclusion);

    let left_rej = left.as_ref().is_some_and(|s| s.reject);
    let right_rej = right.as_ref().is_some_and(|s| s.reject);
    if left_rej || right_rej {
        // (7b) localize the drift change inside the rejecting window
        let chosen = match (&left, &right) {
            (Some(l), Some(r)) if left_rej && right_rej => {
                flags.push(
                    "both drift windows reject; localizing on the side with the larger exceedance".into(),
                );
                if r.tests.max_exceedance() > l.tests.max_exceedance() {
                    r
                } else {
                    l
                }
            }
            (Some(l), _) if left_rej => l,
            (_, Some(r)) => r,
            _ => unreachable!("a rejecting side exists"),
        };
        let alpha_k = if chosen.side == Side::Left { &a1 } else { &a2 };
        report.branch = if chosen.side == Side::Left { Branch::DriftChangeLeft } else { Branch::DriftChangeRight };
        let role = Role::Beta { alpha: alpha_k.clone() };
        let mut change = DriftChange { side: chosen.side, split_used: None, beta1: None, beta2: None, tau_beta: None };
        match estimate::expand_and_estimate(path, model, chosen.window, &role, &cfg.expansion(), cv) {
            Ok(ex) => {
                collect_flags(&mut flags, "step 7", &ex.first.flags);
                collect_flags(&mut flags, "step 7", &ex.second.flags);
                let tau = changepoint::estimate_tau_beta_on(
                    path,
                    model,
                    chosen.window,
                    alpha_k,
                    ex.first.beta(),
                    ex.second.beta(),
                    cfg.keep_profiles,
                )
                .step("7 drift change point")?;
                collect_flags(&mut flags, "step 7", &tau.flags);
                change.split_used = Some(ex.split_used);
                change.beta1 = Some(ex.first);
                change.beta2 = Some(ex.second);
                change.tau_beta = Some(tau);
            }
            Err(e @ (CpdError::NoChangeDetected | CpdError::WindowTooShort { .. })) => {
                flags.push(format!("drift change detected but not localized: {e}"));
            }
            Err(e) => return Err(e).step("7 drift expansion"),
        }
        report.drift_change = Some(change);
    } else {
        // (7a) same-point diagnostic
        match (&left, &right) {
            (Some(l), Some(r)) => {
                let sp = same_point(path, model, l, r, &a1, &a2, tau_hat, cfg).step("7 same-point diagnostic")?;
                report.branch = if sp.exceeds == Some(true) { Branch::SamePointSuspected } else { Branch::NoChange };
                if sp.reference_quantile.is_none() {
                    flags.push("same-point statistic reported without a bootstrap reference".into());
                }
                report.same_point = Some(sp);
            }
            _ => {
                flags.push("a drift window is too short; same-point diagnostic skipped".into());
                report.branch = Branch::NoChange;
            }
        }
    }
    report.drift_left = left;
    report.drift_right = right;
    report.flags = flags;
    Ok(report)
}

fn drift_side(
    path: &Path,
    model: &dyn DiffusionModel,
    side: Side,
    boundary: f64,
    alpha: &[f64],
    cfg: &PipelineConfig,
    flags: &mut Vec<String>,
) -> Result<Option<DriftSide>> {
    let window = cusum::drift_window(path.n(), side, boundary);
    if window.len() < cusum::MIN_DRIFT_WINDOW {
        flags.push(format!("{side:?} drift window has {} increments; tests skipped", window.len()));
        return Ok(None);
    }
    let beta_check = estimate::estimate_beta(path, model, window, alpha, &cfg.optimizer)?;
    collect_flags(flags, "step 6", &beta_check.flags);
    let tests = cusum::drift_tests(
        path,
        model,
        window,
        alpha,
        beta_check.beta(),
        cfg.level,
        &cfg.critical_values,
        cfg.drift_test,
    )?;
    let reject = tests.reject(cfg.drift_test);
    Ok(Some(DriftSide { side, window, beta_check, tests, reject }))
}

#[allow(clippy::too_many_arguments)]
fn same_point(
    path: &Path,
    model: &dyn DiffusionModel,
    left: &DriftSide,
    right: &DriftSide,
    a1: &[f64],
    a2: &[f64],
    tau_alpha: f64,
    cfg: &PipelineConfig,
) -> Result<SamePoint> {
    let (b1, b2) = (left.beta_check.beta(), right.beta_check.beta());
    let horizon = path.horizon();
    let statistic = cusum::same_point_statistic(b1, b2, horizon)?;
    if cfg.bootstrap_reps == 0 {
        return Ok(SamePoint { statistic, reference_quantile: None, bootstrap_reps: 0, bootstrap_failures: 0, exceeds: None });
    }
    // no drift change: pooled β, diffusion switching at τ̂^α
    let (w1, w2) = (left.window.len() as f64, right.window.len() as f64);
    let pooled: Vec<f64> = b1.iter().zip(b2).map(|(x, y)| (w1 * x + w2 * y) / (w1 + w2)).collect();
    let schedule = ParamSchedule::new(vec![
        Segment { end: tau_alpha.clamp(1.0 / path.n() as f64, 1.0 - 1.0 / path.n() as f64), alpha: a1.to_vec(), beta: pooled.clone() },
        Segment { end: 1.0, alpha: a2.to_vec(), beta: pooled },
    ])?;
    let scheme = cfg.bootstrap_scheme.unwrap_or(if model.name() == "ou" {
        Scheme::OuExact
    } else {
        Scheme::Euler { substeps: simulate::DEFAULT_SUBSTEPS }
    });
    let base = rng::child_seed(cfg.seed, 0x5a3e_9017);
    let draws: Vec<Option<f64>> = (0..cfg.bootstrap_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = rng::replication_seed(base, rep);
            let p = simulate::simulate(model, &schedule, path.obs(0), path.n(), path.h(), scheme, seed).ok()?;
            let e1 = estimate::estimate_beta(&p, model, left.window, a1, &cfg.optimizer).ok()?;
            let e2 = estimate::estimate_beta(&p, model, right.window, a2, &cfg.optimizer).ok()?;
            cusum::same_point_statistic(e1.beta(), e2.beta(), horizon).ok()
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_none()).count();
    let mut ok: Vec<f64> = draws.into_iter().flatten().collect();
    if ok.is_empty() {
        return Ok(SamePoint {
            statistic,
            reference_quantile: None,
            bootstrap_reps: cfg.bootstrap_reps,
            bootstrap_failures: failures,
            exceeds: None,
        });
    }
    ok.sort_by(|a, b| a.total_cmp(b));
    let q = simulate::upper_quantile(&ok, cfg.level);
    Ok(SamePoint {
        statistic,
        reference_quantile: Some(q),
        bootstrap_reps: cfg.bootstrap_reps,
        bootstrap_failures: failures,
        exceeds: Some(statistic > q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OuModel;

    #[test]
    fn short_paths_are_rejected() {
        let p = Path::from_scalar(0.01, vec![0.0; 500]).unwrap();
        let err = run_pipeline(&p, &OuModel::default(), &PipelineConfig::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient data"));
    }

    #[test]
    fn invalid_config() {
        let cfg = PipelineConfig { level: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig { fractions: vec![0.1, 0.2], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn null_diffusion_stops_after_step_one() {
        let sched = ParamSchedule::constant(vec![1.0], vec![1.0, 0.0]);
        let p = simulate::simulate_ou_exact(&sched, 0.0, 5000, 0.01, 4).unwrap();
        let r = run_pipeline(&p, &OuModel::default(), &PipelineConfig::default()).unwrap();
        assert_eq!(r.branch, Branch::DiffusionChangeNotDetected);
        assert!(r.alpha1.is_none() && r.drift_left.is_none());
        assert!(r.to_text().contains("diffusion-change-not-detected"));
    }
}
