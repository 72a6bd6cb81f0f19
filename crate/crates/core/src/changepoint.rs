// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change-point location by two-regime contrast minimization, the
//! exclusion window around the diffusion change point, and the Case-A
//! limit-law constants and samplers used to validate the estimators.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::Side;
use crate::error::{CpdError, Result};
use crate::model::DiffusionModel;
use crate::path::{Interval, Path};
use crate::rng;
use crate::simulate::{self, ParamSchedule, Scheme};
use crate::terms;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointEstimate {
    pub tau_hat: f64,
    pub index_hat: usize,
    /// Candidate indices are `window.lo ..= window.hi`.
    pub window: Interval,
    /// More than one index attains the minimum.
    pub tie: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<f64>>,
    pub flags: Vec<String>,
}

/// Smallest `k ∈ 0..=m` minimizing `Σ_{i≤k} d_i`, and whether the
/// minimum is attained more than once.
pub fn prefix_argmin(d: &[f64]) -> (usize, bool) {
    let (mut s, mut best, mut arg, mut tie) = (0.0, 0.0, 0, false);
    for (i, v) in d.iter().enumerate() {
        s += v;
        if s < best {
            best = s;
            arg = i + 1;
            tie = false;
        } else if s == best {
            tie = true;
        }
    }
    (arg, tie)
}

/// Minimizes `Σ_{i≤k} first_i + Σ_{i>k} second_i` over `k ∈ lo..=hi`.
fn two_regime_scan(first: &[f64], second: &[f64], window: Interval, n: usize, keep_profile: bool) -> ChangePointEstimate {
    let d: Vec<f64> = first.iter().zip(second).map(|(a, b)| a - b).collect();
    let (k, tie) = prefix_argmin(&d);
    let profile = keep_profile.then(|| {
        let base: f64 = second.iter().sum();
        let mut out = Vec::with_capacity(d.len() + 1);
        let mut s = 0.0;
        out.push(base);
        for v in &d {
            s += v;
            out.push(base + s);
        }
        out
    });
    let mut flags = Vec::new();
    if tie {
        flags.push("contrast minimum attained at several indices; smallest taken".into());
    }
    let index_hat = window.lo + k;
    ChangePointEstimate { tau_hat: index_hat as f64 / n as f64, index_hat, window, tie, profile, flags }
}

/// `τ̂^α = argmin_k Σ_{i≤k} F_i(α̂₁) + Σ_{i>k} F_i(α̂₂)` over the whole path.
pub fn estimate_tau_alpha(
    path: &Path,
    model: &dyn DiffusionModel,
    alpha1: &[f64],
    alpha2: &[f64],
    keep_profile: bool,
) -> Result<ChangePointEstimate> {
    let iv = path.full();
    let f1 = terms::f_terms(path, model, iv, alpha1)?;
    let f2 = terms::f_terms(path, model, iv, alpha2)?;
    let mut est = two_regime_scan(&f1, &f2, iv, path.n(), keep_profile);
    if alpha1 == alpha2 {
        est.flags.push("alpha estimates coincide; the contrast carries no information".into());
    }
    Ok(est)
}

/// Drift change point inside `window` with the diffusion parameter fixed:
/// `argmin_k Σ_{lo<i≤k} G_i(β̂₁|α̂) + Σ_{k<i≤hi} G_i(β̂₂|α̂)`.
pub fn estimate_tau_beta_on(
    path: &Path,
    model: &dyn DiffusionModel,
    window: Interval,
    alpha: &[f64],
    beta1: &[f64],
    beta2: &[f64],
    keep_profile: bool,
) -> Result<ChangePointEstimate> {
    path.check_interval(window)?;
    let g1 = terms::g_terms(path, model, window, alpha, beta1)?;
    let g2 = terms::g_terms(path, model, window, alpha, beta2)?;
    let mut est = two_regime_scan(&g1, &g2, window, path.n(), keep_profile);
    if beta1 == beta2 {
        est.flags.push("beta estimates coincide; the contrast carries no information".into());
    }
    Ok(est)
}

/// `τ̂₁^β` on `(0, [nτ̲]]` (left) or `τ̂₂^β` on `([nτ̄], n]` (right).
#[allow(clippy::too_many_arguments)]
pub fn estimate_tau_beta(
    path: &Path,
    model: &dyn DiffusionModel,
    side: Side,
    boundary: f64,
    alpha: &[f64],
    beta1: &[f64],
    beta2: &[f64],
    keep_profile: bool,
) -> Result<ChangePointEstimate> {
    let window = crate::cusum::drift_window(path.n(), side, boundary);
    if window.is_empty() {
        return Err(CpdError::WindowTooShort { needed: 1, got: 0 });
    }
    estimate_tau_beta_on(path, model, window, alpha, beta1, beta2, keep_profile)
}

/// `ε₁ = cap ∧ (intercept + slope·log_n|α̂₁ − α̂₂|)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonRule {
    pub cap: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl Default for EpsilonRule {
    fn default() -> Self {
        Self { cap: 0.45, intercept: 0.9, slope: 1.8 }
    }
}

pub const EPSILON1_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionWindow {
    pub epsilon1: f64,
    pub tau_lower: f64,
    pub tau_upper: f64,
    pub flags: Vec<String>,
}

pub fn epsilon1(n: usize, alpha1: &[f64], alpha2: &[f64], rule: &EpsilonRule) -> Result<(f64, bool)> {
    if alpha1.len() != alpha2.len() {
        return Err(CpdError::DimensionMismatch { what: "alpha estimates", expected: alpha1.len(), got: alpha2.len() });
    }
    let gap = alpha1.iter().zip(alpha2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if !(gap > 0.0) {
        return Err(CpdError::invalid("ε₁ is undefined when the alpha estimates coincide"));
    }
    let raw = rule.cap.min(rule.intercept + rule.slope * gap.ln() / (n as f64).ln());
    if raw < EPSILON1_FLOOR {
        Ok((EPSILON1_FLOOR, true))
    } else {
        Ok((raw, false))
    }
}

/// `[τ̂ − n^{−ε₁}, τ̂ + n^{−ε₁}]` clamped to `[1/n, 1 − 1/n]`.
pub fn exclusion_window(n: usize, tau_hat: f64, alpha1: &[f64], alpha2: &[f64], rule: &EpsilonRule) -> Result<ExclusionWindow> {
    if n < 10 {
        return Err(CpdError::invalid("exclusion window needs n ≥ 10"));
    }
    let (eps, floored) = epsilon1(n, alpha1, alpha2, rule)?;
    let mut flags = Vec::new();
    if floored {
        flags.push(format!("epsilon1 floored at {EPSILON1_FLOOR}"));
    }
    let half = (n as f64).powf(-eps);
    let (lo_clamp, hi_clamp) = (1.0 / n as f64, 1.0 - 1.0 / n as f64);
    let mut tau_lower = tau_hat - half;
    let mut tau_upper = tau_hat + half;
    if tau_lower < lo_clamp {
        tau_lower = lo_clamp;
        flags.push("lower window edge clamped to 1/n".into());
    }
    if tau_upper > hi_clamp {
        tau_upper = hi_clamp;
        flags.push("upper window edge clamped to 1 - 1/n".into());
    }
    Ok(ExclusionWindow { epsilon1: eps, tau_lower, tau_upper, flags })
}

/// Source of draws from (an approximation of) the invariant measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvariantSampler {
    /// Thinned long path after burn-in.
    Path { x0: Vec<f64>, h: f64, burn_in: usize, thin: usize, scheme: Scheme, seed: u64 },
    /// Caller-provided states.
    Samples { states: Vec<Vec<f64>> },
}

impl InvariantSampler {
    pub fn path(x0: Vec<f64>, seed: u64) -> Self {
        InvariantSampler::Path { x0, h: 0.01, burn_in: 1_000_000, thin: 100, scheme: Scheme::Euler { substeps: 1 }, seed }
    }

    fn draw(&self, model: &dyn DiffusionModel, alpha: &[f64], beta: &[f64], n_mc: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            InvariantSampler::Samples { states } => {
                if states.is_empty() {
                    return Err(CpdError::invalid("invariant sampler has no states"));
                }
                Ok(states.clone())
            }
            InvariantSampler::Path { x0, h, burn_in, thin, scheme, seed } => {
                if n_mc == 0 || *thin == 0 {
                    return Err(CpdError::invalid("invariant sampler needs n_mc ≥ 1 and thin ≥ 1"));
                }
                let n = burn_in + thin * n_mc;
                let sched = ParamSchedule::constant(alpha.to_vec(), beta.to_vec());
                let p = simulate::simulate(model, &sched, x0, n, *h, *scheme, *seed)?;
                Ok((1..=n_mc).map(|j| p.obs(burn_in + j * thin).to_vec()).collect())
            }
        }
    }
}

fn check_direction(e: &[f64], dim: usize) -> Result<()> {
    if e.len() != dim {
        return Err(CpdError::DimensionMismatch { what: "direction", expected: dim, got: e.len() });
    }
    Ok(())
}

/// `𝒥_β = eᵀ E_μ[∂_β bᵀ A⁻¹ ∂_β b] e` by Monte Carlo.
pub fn compute_j_beta(
    model: &dyn DiffusionModel,
    alpha: &[f64],
    beta: &[f64],
    e: &[f64],
    sampler: &InvariantSampler,
    n_mc: usize,
) -> Result<f64> {
    check_direction(e, model.beta_dim())?;
    let states = sampler.draw(model, alpha, beta, n_mc)?;
    let (d, r, q) = (model.state_dim(), model.noise_dim(), model.beta_dim());
    let mut a = vec![0.0; d * r];
    let mut big_a = vec![0.0; d * d];
    let mut jac = vec![0.0; d * q];
    let mut sum = 0.0;
    for (idx, x) in states.iter().enumerate() {
        model.diffusion(x, alpha, &mut a);
        crate::linalg::outer_self(&a, d, r, &mut big_a);
        if !crate::linalg::cholesky(&mut big_a, d) {
            return Err(CpdError::SingularDiffusion { index: idx });
        }
        model.drift_jac_beta(x, beta, &mut jac);
        // ∂b·e, whitened
        let mut v: Vec<f64> = (0..d).map(|k| (0..q).map(|l| jac[k * q + l] * e[l]).sum()).collect();
        crate::linalg::forward_solve(&big_a, d, &mut v);
        sum += v.iter().map(|w| w * w).sum::<f64>();
    }
    Ok(sum / states.len() as f64)
}

/// `𝒥_α = ½ eᵀ E_μ[tr(A⁻¹∂_{ℓ₁}A A⁻¹∂_{ℓ₂}A)] e` by Monte Carlo; needs the
/// model's `∂_α A`.
pub fn compute_j_alpha(
    model: &dyn DiffusionModel,
    alpha: &[f64],
    beta: &[f64],
    e: &[f64],
    sampler: &InvariantSampler,
    n_mc: usize,
) -> Result<f64> {
    let (d, r, p) = (model.state_dim(), model.noise_dim(), model.alpha_dim());
    check_direction(e, p)?;
    let states = sampler.draw(model, alpha, beta, n_mc)?;
    let mut a = vec![0.0; d * r];
    let mut big_a = vec![0.0; d * d];
    let mut da = vec![0.0; p * d * d];
    let mut sum = 0.0;
    for (idx, x) in states.iter().enumerate() {
        if !model.diffusion_jac_alpha(x, alpha, &mut da) {
            return Err(CpdError::invalid("model does not provide the diffusion Jacobian in alpha"));
        }
        model.diffusion(x, alpha, &mut a);
        crate::linalg::outer_self(&a, d, r, &mut big_a);
        let inv = DMatrix::from_row_slice(d, d, &big_a)
            .try_inverse()
            .ok_or(CpdError::SingularDiffusion { index: idx })?;
        // ∂_e A = Σ_ℓ e_ℓ ∂_ℓ A
        let mut de = DMatrix::<f64>::zeros(d, d);
        for l in 0..p {
            de += DMatrix::from_row_slice(d, d, &da[l * d * d..(l + 1) * d * d]) * e[l];
        }
        let m = &inv * de;
        sum += (&m * &m).trace();
    }
    Ok(0.5 * sum / states.len() as f64)
}

/// OU closed form under `μ = N(γ, α²/2β)`:
/// `E[Ξ^β] = diag(1/(2β), β²/α²)`.
pub fn ou_j_beta_analytic(alpha: f64, beta: f64, e: &[f64]) -> Result<f64> {
    check_direction(e, 2)?;
    Ok(e[0] * e[0] / (2.0 * beta) + e[1] * e[1] * beta * beta / (alpha * alpha))
}

/// OU closed form: `½ (A⁻¹ ∂_α A)² = 2/α²`.
pub fn ou_j_alpha_analytic(alpha: f64, e: &[f64]) -> Result<f64> {
    check_direction(e, 1)?;
    Ok(2.0 * e[0] * e[0] / (alpha * alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLawConfig {
    pub reps: usize,
    /// Defaults to `50/J`.
    pub v_max: Option<f64>,
    /// Defaults to `0.01/J`.
    pub grid_step: Option<f64>,
    pub seed: u64,
}

impl Default for LimitLawConfig {
    fn default() -> Self {
        Self { reps: 10_000, v_max: None, grid_step: None, seed: 0x11a7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLawSample {
    /// Draws in replication order.
    pub draws: Vec<f64>,
    pub boundary_fraction: f64,
    pub flags: Vec<String>,
}

/// Draws of `argmin_v {−2√J W(v) + J|v|}` for a two-sided Wiener process
/// `W` on the lattice `{j·step : |j·step| ≤ v_max}`.
pub fn sample_limit_argmin(j: f64, cfg: &LimitLawConfig) -> Result<LimitLawSample> {
    if !(j > 0.0) || !j.is_finite() {
        return Err(CpdError::invalid(format!("limit-law constant must be positive, got {j}")));
    }
    let v_max = cfg.v_max.unwrap_or(50.0 / j);
    let step = cfg.grid_step.unwrap_or(0.01 / j);
    if !(step > 0.0) || !(v_max >= step) || cfg.reps == 0 {
        return Err(CpdError::invalid("limit-law grid needs 0 < step ≤ v_max and reps ≥ 1"));
    }
    let half = (v_max / step).round() as usize;
    let (sd, c) = (step.sqrt(), 2.0 * j.sqrt());
    let drift = j * step;
    let results: Vec<(f64, bool)> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(rng::replication_seed(cfg.seed, rep));
            let (mut best, mut arg) = (0.0, 0i64);
            for sign in [1i64, -1] {
                let mut w = 0.0;
                for k in 1..=half {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w += sd * z;
                    let g = -c * w + drift * k as f64;
                    if g < best {
                        best = g;
                        arg = sign * k as i64;
                    }
                }
            }
            (arg as f64 * step, arg.unsigned_abs() as usize == half)
        })
        .collect();
    let hits = results.iter().filter(|r| r.1).count();
    let boundary_fraction = hits as f64 / cfg.reps as f64;
    if boundary_fraction >= 0.05 {
        return Err(CpdError::BoundaryHits { fraction: boundary_fraction });
    }
    let mut flags = Vec::new();
    if boundary_fraction >= 0.01 {
        flags.push(format!("{:.1}% of draws hit the grid boundary", 100.0 * boundary_fraction));
    }
    Ok(LimitLawSample { draws: results.into_iter().map(|r| r.0).collect(), boundary_fraction, flags })
}
