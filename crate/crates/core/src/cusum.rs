// SPDX-License-Identifier: MIT OR Apache-2.0

//! CUSUM test statistics for diffusion and drift parameter changes, their
//! critical values and the same-point diagnostic.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::linalg;
use crate::model::DiffusionModel;
use crate::path::{Interval, Path};
use crate::simulate;
use crate::terms;

/// Drift windows shorter than this are rejected.
pub const MIN_DRIFT_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Alpha,
    T1,
    T2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: Statistic,
    pub statistic: f64,
    /// Absolute increment index attaining the supremum.
    pub argmax_index: usize,
    pub dim: usize,
    pub critical_value: f64,
    pub level: f64,
    pub reject: bool,
    pub window: Interval,
}

impl TestResult {
    fn new(test: Statistic, sup: (f64, usize), dim: usize, level: f64, cv: f64, window: Interval) -> Self {
        Self {
            test,
            statistic: sup.0,
            argmax_index: window.lo + sup.1,
            dim,
            critical_value: cv,
            level,
            reject: sup.0 > cv,
            window,
        }
    }

    pub fn exceedance(&self) -> f64 {
        self.statistic - self.critical_value
    }
}

/// `max_{1≤j≤m} scale·‖W (S_j − (j/m) S_m)‖` over a flat sequence of
/// k-vectors, with `W` the identity when `weight` is `None`.
///
/// Returns the supremum and the smallest `j` attaining it.
pub fn cusum_sup(values: &[f64], k: usize, scale: f64, weight: Option<&DMatrix<f64>>) -> Result<(f64, usize)> {
    if k == 0 || values.len() % k != 0 {
        return Err(CpdError::invalid("sequence length is not a multiple of the vector dimension"));
    }
    let m = values.len() / k;
    if m < 2 {
        return Err(CpdError::invalid("CUSUM needs at least two elements"));
    }
    if !(scale > 0.0) {
        return Err(CpdError::invalid("CUSUM scale must be positive"));
    }
    if let Some(w) = weight {
        if w.shape() != (k, k) {
            return Err(CpdError::DimensionMismatch { what: "CUSUM weight", expected: k, got: w.nrows() });
        }
    }
    let mut total = vec![0.0; k];
    for row in values.chunks_exact(k) {
        for c in 0..k {
            total[c] += row[c];
        }
    }
    let mut prefix = vec![0.0; k];
    let mut dev = vec![0.0; k];
    let (mut best, mut arg) = (f64::NEG_INFINITY, 1);
    for (j0, row) in values.chunks_exact(k).enumerate() {
        let j = j0 + 1;
        let frac = j as f64 / m as f64;
        for c in 0..k {
            prefix[c] += row[c];
            dev[c] = prefix[c] - frac * total[c];
        }
        let norm2 = match weight {
            None => dev.iter().map(|v| v * v).sum::<f64>(),
            Some(w) => (0..k)
                .map(|r| {
                    let s: f64 = (0..k).map(|c| w[(r, c)] * dev[c]).sum();
                    s * s
                })
                .sum(),
        };
        if norm2 > best {
            best = norm2;
            arg = j;
        }
    }
    Ok((scale * best.sqrt(), arg))
}

/// `T^α = (2dm)^{−1/2} max_k |Σ_{i≤k} η_i − (k/m) Σ η_i|` over `iv`.
pub fn t_alpha(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    level: f64,
    cv: &CvSource,
) -> Result<TestResult> {
    let eta = terms::eta_terms(path, model, iv, alpha)?;
    let d = model.state_dim() as f64;
    let sup = cusum_sup(&eta, 1, 1.0 / (2.0 * d * iv.len() as f64).sqrt(), None)?;
    Ok(TestResult::new(Statistic::Alpha, sup, 1, level, critical_value(1, level, cv)?, iv))
}

pub fn xi_sequence(path: &Path, model: &dyn DiffusionModel, iv: Interval, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    terms::xi_terms(path, model, iv, alpha, beta)
}

fn check_drift_window(iv: Interval) -> Result<()> {
    if iv.len() < MIN_DRIFT_WINDOW {
        return Err(CpdError::WindowTooShort { needed: MIN_DRIFT_WINDOW, got: iv.len() });
    }
    Ok(())
}

/// Drift windows on either side of the excluded neighbourhood of the
/// diffusion change point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Left: `(0, [nτ̲]]`; right: `([nτ̄], n]`.
pub fn drift_window(n: usize, side: Side, boundary: f64) -> Interval {
    let k = ((n as f64 * boundary).floor() as usize).min(n);
    match side {
        Side::Left => Interval::new(0, k),
        Side::Right => Interval::new(k, n),
    }
}

/// CUSUM of `ξ̌` over `iv`, scale `(d·m·h)^{−1/2}`, against `w₁(ε)`.
pub fn t1_on(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    beta: &[f64],
    level: f64,
    cv: &CvSource,
) -> Result<TestResult> {
    path.check_interval(iv)?;
    check_drift_window(iv)?;
    let xi = xi_sequence(path, model, iv, alpha, beta)?;
    let d = model.state_dim() as f64;
    let scale = 1.0 / (d * iv.len() as f64 * path.h()).sqrt();
    let sup = cusum_sup(&xi, 1, scale, None)?;
    Ok(TestResult::new(Statistic::T1, sup, 1, level, critical_value(1, level, cv)?, iv))
}

#[allow(clippy::too_many_arguments)]
pub fn t1_drift(
    path: &Path,
    model: &dyn DiffusionModel,
    side: Side,
    boundary: f64,
    alpha: &[f64],
    beta: &[f64],
    level: f64,
    cv: &CvSource,
) -> Result<TestResult> {
    t1_on(path, model, drift_window(path.n(), side, boundary), alpha, beta, level, cv)
}

/// `ζ̌_i` as a flat m × q buffer.
pub fn zeta_sequence(path: &Path, model: &dyn DiffusionModel, iv: Interval, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    Ok(terms::zeta_and_gram(path, model, iv, alpha, beta, true)?.0)
}

/// `(1/m) Σ ∂_β bᵀ A⁻¹ ∂_β b` without a conditioning check.
pub fn fisher_matrix(path: &Path, model: &dyn DiffusionModel, iv: Interval, alpha: &[f64], beta: &[f64]) -> Result<DMatrix<f64>> {
    let q = model.beta_dim();
    let (_, gram) = terms::zeta_and_gram(path, model, iv, alpha, beta, false)?;
    Ok(DMatrix::from_row_slice(q, q, &gram) / iv.len() as f64)
}

/// As [`fisher_matrix`], failing when the condition number exceeds 10¹².
pub fn fisher_weight(path: &Path, model: &dyn DiffusionModel, iv: Interval, alpha: &[f64], beta: &[f64]) -> Result<DMatrix<f64>> {
    let m = fisher_matrix(path, model, iv, alpha, beta)?;
    check_conditioning(&m)?;
    Ok(m)
}

fn check_conditioning(m: &DMatrix<f64>) -> Result<()> {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || !(min > linalg::EIGEN_FLOOR * max) {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(CpdError::SingularWeight { condition });
    }
    Ok(())
}

/// CUSUM of `𝓘^{−1/2} ζ̌` with the given scale; the kernel of `T2`.
pub fn weighted_cusum(zeta: &[f64], fisher: &DMatrix<f64>, scale: f64) -> Result<(f64, usize)> {
    let w = linalg::inverse_sqrt_spd(fisher)?;
    cusum_sup(zeta, fisher.nrows(), scale, Some(&w))
}

/// CUSUM of `𝓘^{−1/2} ζ̌` over `iv`, scale `(m·h)^{−1/2}`, against `w_q(ε)`.
pub fn t2_on(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    beta: &[f64],
    level: f64,
    cv: &CvSource,
) -> Result<TestResult> {
    path.check_interval(iv)?;
    check_drift_window(iv)?;
    let q = model.beta_dim();
    let (zeta, gram) = terms::zeta_and_gram(path, model, iv, alpha, beta, true)?;
    let fisher = DMatrix::from_row_slice(q, q, &gram) / iv.len() as f64;
    let scale = 1.0 / (iv.len() as f64 * path.h()).sqrt();
    let sup = weighted_cusum(&zeta, &fisher, scale)?;
    Ok(TestResult::new(Statistic::T2, sup, q, level, critical_value(q, level, cv)?, iv))
}

#[allow(clippy::too_many_arguments)]
pub fn t2_drift(
    path: &Path,
    model: &dyn DiffusionModel,
    side: Side,
    boundary: f64,
    alpha: &[f64],
    beta: &[f64],
    level: f64,
    cv: &CvSource,
) -> Result<TestResult> {
    t2_on(path, model, drift_window(path.n(), side, boundary), alpha, beta, level, cv)
}

/// Which drift statistics to compute and how to combine their decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftTest {
    T1,
    T2,
    /// Both computed; a change is declared if either rejects.
    #[default]
    Either,
    /// Both computed; a change is declared only if both reject.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTests {
    pub t1: Option<TestResult>,
    pub t2: Option<TestResult>,
}

impl DriftTests {
    pub fn reject(&self, rule: DriftTest) -> bool {
        let r1 = self.t1.as_ref().map(|t| t.reject);
        let r2 = self.t2.as_ref().map(|t| t.reject);
        match rule {
            DriftTest::T1 => r1.unwrap_or(false),
            DriftTest::T2 => r2.unwrap_or(false),
            DriftTest::Either => r1.unwrap_or(false) || r2.unwrap_or(false),
            DriftTest::Both => r1.unwrap_or(false) && r2.unwrap_or(false),
        }
    }

    /// The computed statistic with the larger exceedance.
    pub fn primary(&self, _rule: DriftTest) -> &TestResult {
        match (&self.t1, &self.t2) {
            (Some(a), Some(b)) => {
                if b.exceedance() > a.exceedance() {
                    b
                } else {
                    a
                }
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("at least one drift test is computed"),
        }
    }

    pub fn max_exceedance(&self) -> f64 {
        self.primary(DriftTest::Either).exceedance()
    }
}

/// Runs the drift statistics selected by `rule` on `iv`. `T1` is skipped
/// (left `None`) for models whose noise is not square when `rule` allows it.
#[allow(clippy::too_many_arguments)]
pub fn drift_tests(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    beta: &[f64],
    level: f64,
    cv: &CvSource,
    rule: DriftTest,
) -> Result<DriftTests> {
    let square = model.noise_dim() == model.state_dim();
    let t1 = match rule {
        DriftTest::T2 => None,
        DriftTest::T1 | DriftTest::Both => Some(t1_on(path, model, iv, alpha, beta, level, cv)?),
        DriftTest::Either if square => Some(t1_on(path, model, iv, alpha, beta, level, cv)?),
        DriftTest::Either => None,
    };
    let t2 = match rule {
        DriftTest::T1 => None,
        _ => Some(t2_on(path, model, iv, alpha, beta, level, cv)?),
    };
    Ok(DriftTests { t1, t2 })
}

/// Monte-Carlo settings for bridge-supremum quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub grid: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { grid: 10_000, reps: 10_000, seed: 20_240_101 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvSource {
    /// Shipped values where available, Monte Carlo with defaults otherwise.
    #[default]
    Table,
    MonteCarlo(McConfig),
}

/// Upper 5% points of `sup ‖B_k⁰‖` for k = 1, 2.
pub const CV_TABLE: [(usize, f64, f64); 2] = [(1, 0.05, 1.3617), (2, 0.05, 1.5736)];

fn table_lookup(k: usize, level: f64) -> Option<f64> {
    CV_TABLE.iter().find(|(tk, te, _)| *tk == k && *te == level).map(|t| t.2)
}

type CacheKey = (usize, u64, McConfig);

fn cache() -> &'static Mutex<HashMap<CacheKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `w_k(ε)`, the upper-ε point of `sup_{0≤s≤1} ‖B_k⁰(s)‖`.
pub fn critical_value(k: usize, level: f64, source: &CvSource) -> Result<f64> {
    if k == 0 {
        return Err(CpdError::invalid("bridge dimension must be ≥ 1"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CpdError::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let mc = match source {
        CvSource::Table => match table_lookup(k, level) {
            Some(v) => return Ok(v),
            None => McConfig::default(),
        },
        CvSource::MonteCarlo(mc) => *mc,
    };
    let key = (k, level.to_bits(), mc);
    if let Some(v) = cache().lock().unwrap().get(&key) {
        return Ok(*v);
    }
    // computed outside the lock; a concurrent duplicate computes the same value
    let sorted = simulate::sample_brownian_bridge_sup(k, mc.grid, mc.reps, mc.seed)?;
    let v = simulate::upper_quantile(&sorted, level);
    cache().lock().unwrap().insert(key, v);
    Ok(v)
}

/// Monte-Carlo `w_k(ε)` with a standard error from 10 consecutive batches.
pub fn critical_value_with_se(k: usize, level: f64, mc: &McConfig) -> Result<(f64, f64)> {
    const BATCHES: usize = 10;
    if !(level > 0.0 && level < 1.0) {
        return Err(CpdError::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let draws = simulate::bridge_sup_draws(k, mc.grid, mc.reps, mc.seed)?;
    let mut sorted = draws.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let value = simulate::upper_quantile(&sorted, level);
    let size = mc.reps / BATCHES;
    if size == 0 {
        return Ok((value, f64::NAN));
    }
    let qs: Vec<f64> = draws
        .chunks_exact(size)
        .take(BATCHES)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_by(|a, b| a.total_cmp(b));
            simulate::upper_quantile(&c, level)
        })
        .collect();
    let mean = qs.iter().sum::<f64>() / BATCHES as f64;
    let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok((value, (var / BATCHES as f64).sqrt()))
}

/// `√T ‖β̌₁ − β̌₂‖`
pub fn same_point_statistic(beta1: &[f64], beta2: &[f64], horizon: f64) -> Result<f64> {
    if beta1.len() != beta2.len() {
        return Err(CpdError::DimensionMismatch { what: "beta estimates", expected: beta1.len(), got: beta2.len() });
    }
    if !(horizon >= 0.0) {
        return Err(CpdError::invalid("horizon must be non-negative"));
    }
    let diff = DVector::from_iterator(beta1.len(), beta1.iter().zip(beta2).map(|(a, b)| a - b));
    Ok(horizon.sqrt() * diff.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OuModel;

    #[test]
    fn cusum_constant_sequence_is_zero() {
        let (s, _) = cusum_sup(&[3.0; 10], 1, 1.0, None).unwrap();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn cusum_step_sequence() {
        let v = [0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0];
        let (s, j) = cusum_sup(&v, 1, 1.0 / 16f64.sqrt(), None).unwrap();
        assert_eq!((s, j), (1.0, 4));
    }

    #[test]
    fn cusum_rejects_degenerate_input() {
        assert!(cusum_sup(&[1.0], 1, 1.0, None).is_err());
        assert!(cusum_sup(&[1.0, 2.0, 3.0], 2, 1.0, None).is_err());
        assert!(cusum_sup(&[1.0, 2.0], 1, 0.0, None).is_err());
    }

    #[test]
    fn t_alpha_identical_increments() {
        let p = Path::from_scalar(0.1, (0..50).map(|i| i as f64 * 0.3).collect()).unwrap();
        let t = t_alpha(&p, &OuModel::default(), p.full(), &[1.0], 0.05, &CvSource::Table).unwrap();
        assert!(t.statistic.abs() < 1e-12);
        assert!(!t.reject);
        assert_eq!(t.critical_value, 1.3617);
    }

    #[test]
    fn xi_hand_values() {
        let m = OuModel::default();
        // x = γ so b = 0; ΔX = 1, α̂ = 2 → 0.5
        let p = Path::from_scalar(1.0, vec![2.0, 3.0, 4.0]).unwrap();
        let xi = xi_sequence(&p, &m, Interval::new(0, 1), &[2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(xi, vec![0.5]);
    }

    #[test]
    fn zeta_hand_values() {
        let m = OuModel::default();
        // X = 3, (β, γ) = (1, 2), h = 1: h·b = −1, so ΔX = −0.9 leaves residual 0.1
        let p = Path::from_scalar(1.0, vec![3.0, 2.1, 2.0]).unwrap();
        let z = zeta_sequence(&p, &m, Interval::new(0, 1), &[1.0], &[1.0, 2.0]).unwrap();
        assert!((z[0] + 0.1).abs() < 1e-12 && (z[1] - 0.1).abs() < 1e-12, "{z:?}");
    }

    #[test]
    fn fisher_constant_path_is_rank_one() {
        let m = OuModel::default();
        let p = Path::from_scalar(0.1, vec![3.0; 200]).unwrap();
        let f = fisher_matrix(&p, &m, p.full(), &[1.0], &[1.5, 2.0]).unwrap();
        let expect = [1.0, -1.5, -1.5, 2.25];
        for (a, b) in f.transpose().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(f, f.transpose());
        assert!(matches!(
            fisher_weight(&p, &m, p.full(), &[1.0], &[1.5, 2.0]),
            Err(CpdError::SingularWeight { .. })
        ));
    }

    #[test]
    fn drift_window_bounds() {
        assert_eq!(drift_window(1000, Side::Left, 0.4567), Interval::new(0, 456));
        assert_eq!(drift_window(1000, Side::Right, 0.8), Interval::new(800, 1000));
    }

    #[test]
    fn zero_window_statistics() {
        let m = OuModel::default();
        let p = Path::from_scalar(0.1, vec![2.0; 300]).unwrap();
        let iv = p.full();
        let t1 = t1_on(&p, &m, iv, &[1.0], &[1.0, 2.0], 0.05, &CvSource::Table).unwrap();
        assert_eq!(t1.statistic, 0.0);
        let short = Interval::new(0, 50);
        assert!(matches!(
            t1_on(&p, &m, short, &[1.0], &[1.0, 2.0], 0.05, &CvSource::Table),
            Err(CpdError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn table_values() {
        assert_eq!(critical_value(1, 0.05, &CvSource::Table).unwrap(), 1.3617);
        assert_eq!(critical_value(2, 0.05, &CvSource::Table).unwrap(), 1.5736);
        assert!(critical_value(1, 1.0, &CvSource::Table).is_err());
    }

    #[test]
    fn same_point_arithmetic() {
        assert_eq!(same_point_statistic(&[1.0, 2.0], &[1.0, 2.0], 50.0).unwrap(), 0.0);
        assert!((same_point_statistic(&[1.3, 2.4], &[1.0, 2.0], 100.0).unwrap() - 5.0).abs() < 1e-12);
        assert!(same_point_statistic(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }
}
