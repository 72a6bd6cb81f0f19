// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adaptive quasi-likelihood estimation on observation sub-intervals:
//! `α̂ = argmin Σ F_i(α)`, then `β̂ = argmin Σ G_i(β | α̂)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cusum::{self, CvSource, DriftTest, TestResult};
use crate::error::{CpdError, Result};
use crate::model::DiffusionModel;
use crate::optim::{self, OptimizerConfig, OptimizerTrace};
use crate::path::{Interval, Path};
use crate::terms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    NelderMead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub interval: Interval,
    pub alpha_hat: Option<Vec<f64>>,
    pub beta_hat: Option<Vec<f64>>,
    pub contrast_value: f64,
    pub method: Method,
    pub trace: OptimizerTrace,
    pub flags: Vec<String>,
}

impl IntervalEstimate {
    pub fn alpha(&self) -> &[f64] {
        self.alpha_hat.as_deref().unwrap_or(&[])
    }
    pub fn beta(&self) -> &[f64] {
        self.beta_hat.as_deref().unwrap_or(&[])
    }
}

/// `Σ_{i ∈ iv} F_i(α)`
pub fn alpha_contrast(path: &Path, model: &dyn DiffusionModel, iv: Interval, alpha: &[f64]) -> Result<f64> {
    Ok(terms::f_terms(path, model, iv, alpha)?.iter().sum())
}

/// `Σ_{i ∈ iv} G_i(β | α)`
pub fn beta_contrast(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    beta: &[f64],
    alpha: &[f64],
) -> Result<f64> {
    Ok(terms::g_terms(path, model, iv, alpha, beta)?.iter().sum())
}

fn check_len(iv: Interval, needed: usize) -> Result<()> {
    if iv.len() < needed {
        return Err(CpdError::WindowTooShort { needed, got: iv.len() });
    }
    Ok(())
}

fn closed_trace() -> OptimizerTrace {
    OptimizerTrace { iterations: 0, evaluations: 0, converged: true }
}

fn push_optimizer_flags(flags: &mut Vec<String>, trace: &OptimizerTrace, on_boundary: bool, what: &str) {
    if !trace.converged {
        flags.push(format!("{what}: optimizer did not converge, best iterate returned"));
    }
    if on_boundary {
        flags.push(format!("{what}: estimate on the parameter box boundary"));
    }
}

pub fn estimate_alpha(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    cfg: &OptimizerConfig,
) -> Result<IntervalEstimate> {
    path.check_interval(iv)?;
    check_len(iv, model.alpha_dim() + 1)?;
    let space = model.alpha_space();
    let mut flags = Vec::new();

    if model.additive_scalar_noise() {
        let mut dx = [0.0];
        let mut ss = 0.0;
        for i in iv.indices() {
            path.increment(i, &mut dx);
            ss += dx[0] * dx[0];
        }
        let mut alpha = vec![(ss / (iv.len() as f64 * path.h())).sqrt()];
        if space.clamp(&mut alpha) {
            flags.push(format!("alpha: closed-form estimate clamped to the parameter box ({})", alpha[0]));
        }
        let contrast_value = alpha_contrast(path, model, iv, &alpha)?;
        return Ok(IntervalEstimate {
            interval: iv,
            alpha_hat: Some(alpha),
            beta_hat: None,
            contrast_value,
            method: Method::ClosedForm,
            trace: closed_trace(),
            flags,
        });
    }

    // surface structural errors (dimensions, singular A) before optimizing
    let centre: Vec<f64> = space.lo.iter().zip(&space.hi).map(|(l, h)| 0.5 * (l + h)).collect();
    terms::f_terms(path, model, iv, &centre).map(|_| ()).or_else(|e| match e {
        CpdError::SingularDiffusion { .. } => Ok(()),
        e => Err(e),
    })?;
    let m = optim::minimize(|a| alpha_contrast(path, model, iv, a).unwrap_or(f64::INFINITY), space, None, cfg);
    if !m.value.is_finite() {
        // every trial point failed; report why
        alpha_contrast(path, model, iv, &m.x)?;
    }
    push_optimizer_flags(&mut flags, &m.trace, space.on_boundary(&m.x), "alpha");
    Ok(IntervalEstimate {
        interval: iv,
        alpha_hat: Some(m.x),
        beta_hat: None,
        contrast_value: m.value,
        method: Method::NelderMead,
        trace: m.trace,
        flags,
    })
}

/// Least-squares coefficients of `ΔX_i ≈ h φ(X_{t_{i−1}})ᵀ c`.
fn drift_regression(path: &Path, model: &dyn DiffusionModel, iv: Interval) -> Option<Vec<f64>> {
    let lin = model.linear_drift()?;
    let k = lin.n_features();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut phi = vec![0.0; k];
    let mut dx = [0.0];
    for i in iv.indices() {
        lin.features(path.obs(i - 1)[0], &mut phi);
        path.increment(i, &mut dx);
        for a in 0..k {
            xty[a] += phi[a] * dx[0];
            for b in 0..=a {
                xtx[(a, b)] += phi[a] * phi[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    xtx *= path.h();
    let c = xtx.cholesky()?.solve(&xty);
    if c.iter().any(|v| !v.is_finite()) {
        return None;
    }
    lin.beta_from_coefficients(c.as_slice())
}

pub fn estimate_beta(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    cfg: &OptimizerConfig,
) -> Result<IntervalEstimate> {
    path.check_interval(iv)?;
    check_len(iv, model.beta_dim() + 1)?;
    let space = model.beta_space();
    let mut flags = Vec::new();
    // validates α and A along the interval
    let objective = |b: &[f64]| beta_contrast(path, model, iv, b, alpha);
    let centre: Vec<f64> = space.lo.iter().zip(&space.hi).map(|(l, h)| 0.5 * (l + h)).collect();
    objective(&centre)?;

    let mut start = None;
    if model.additive_scalar_noise() {
        match drift_regression(path, model, iv) {
            Some(beta) if space.contains(&beta) => {
                let contrast_value = objective(&beta)?;
                return Ok(IntervalEstimate {
                    interval: iv,
                    alpha_hat: Some(alpha.to_vec()),
                    beta_hat: Some(beta),
                    contrast_value,
                    method: Method::ClosedForm,
                    trace: closed_trace(),
                    flags,
                });
            }
            Some(mut beta) => {
                space.clamp(&mut beta);
                flags.push("beta: unconstrained least-squares estimate outside the box, refined numerically".into());
                start = Some(beta);
            }
            None => flags.push("beta: degenerate drift design, closed form unavailable".into()),
        }
    }
    let m = optim::minimize(|b| objective(b).unwrap_or(f64::INFINITY), space, start.as_deref(), cfg);
    push_optimizer_flags(&mut flags, &m.trace, space.on_boundary(&m.x), "beta");
    Ok(IntervalEstimate {
        interval: iv,
        alpha_hat: Some(alpha.to_vec()),
        beta_hat: Some(m.x),
        contrast_value: m.value,
        method: Method::NelderMead,
        trace: m.trace,
        flags,
    })
}

/// Which parameter an expansion search targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Role {
    Alpha,
    /// Drift, with the diffusion parameter held at the given value.
    Beta { alpha: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Margin fractions tried in order; strictly decreasing in (0, 0.5).
    pub fractions: Vec<f64>,
    pub min_margin: usize,
    pub level: f64,
    pub drift_test: DriftTest,
    pub optimizer: OptimizerConfig,
}

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.25, 0.125, 0.0625, 0.01];

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            min_margin: 50,
            level: 0.05,
            drift_test: DriftTest::Either,
            optimizer: OptimizerConfig::default(),
        }
    }
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(CpdError::invalid("expansion fractions are empty"));
    }
    let mut prev = 0.5;
    for &c in fractions {
        if !(c > 0.0 && c < prev) {
            return Err(CpdError::invalid("expansion fractions must decrease strictly within (0, 0.5)"));
        }
        prev = c;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub first: IntervalEstimate,
    pub second: IntervalEstimate,
    pub split_used: f64,
    /// Tests run on the middle part of each split tried, in order.
    pub tests: Vec<TestResult>,
}

/// Tests the middle `(lo + cL, hi − cL]` for each margin fraction `c` in
/// turn; at the first rejection, estimates from the two outer margins.
pub fn expand_and_estimate(
    path: &Path,
    model: &dyn DiffusionModel,
    window: Interval,
    role: &Role,
    cfg: &ExpansionConfig,
    cv: &CvSource,
) -> Result<Expansion> {
    path.check_interval(window)?;
    validate_fractions(&cfg.fractions)?;
    let len = window.len();
    let smallest = cfg.fractions.last().copied().unwrap();
    let smallest_margin = (smallest * len as f64).floor() as usize;
    if smallest_margin < cfg.min_margin {
        return Err(CpdError::WindowTooShort {
            needed: (cfg.min_margin as f64 / smallest).ceil() as usize,
            got: len,
        });
    }
    let mut tests = Vec::new();
    for &c in &cfg.fractions {
        let margin = (c * len as f64).floor() as usize;
        let middle = Interval::new(window.lo + margin, window.hi - margin);
        let left = Interval::new(window.lo, window.lo + margin);
        let right = Interval::new(window.hi - margin, window.hi);
        let (reject, result) = match role {
            Role::Alpha => {
                let est = estimate_alpha(path, model, middle, &cfg.optimizer)?;
                let t = cusum::t_alpha(path, model, middle, est.alpha(), cfg.level, cv)?;
                (t.reject, t)
            }
            Role::Beta { alpha } => {
                let est = estimate_beta(path, model, middle, alpha, &cfg.optimizer)?;
                let d = cusum::drift_tests(path, model, middle, alpha, est.beta(), cfg.level, cv, cfg.drift_test)?;
                let reject = d.reject(cfg.drift_test);
                (reject, d.primary(cfg.drift_test).clone())
            }
        };
        tests.push(result);
        if reject {
            let (first, second) = match role {
                Role::Alpha => (
                    estimate_alpha(path, model, left, &cfg.optimizer)?,
                    estimate_alpha(path, model, right, &cfg.optimizer)?,
                ),
                Role::Beta { alpha } => (
                    estimate_beta(path, model, left, alpha, &cfg.optimizer)?,
                    estimate_beta(path, model, right, alpha, &cfg.optimizer)?,
                ),
            };
            return Ok(Expansion { first, second, split_used: c, tests });
        }
    }
    Err(CpdError::NoChangeDetected)
}
