// SPDX-License-Identifier: MIT OR Apache-2.0

//! Diffusion models `dX_t = b(X_t, β) dt + a(X_t, α) dW_t`.
//!
//! Coefficients are evaluated into caller-provided buffers so the per-step
//! statistics can run without allocating. Matrices are row-major.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::linalg;

/// Axis-aligned compact parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(CpdError::DimensionMismatch {
                what: "parameter box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(CpdError::invalid("parameter box needs finite lo < hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Projects `p` onto the box; returns whether any coordinate moved.
    pub fn clamp(&self, p: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (l, h)) in p.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            let c = v.clamp(*l, *h);
            if c != *v || v.is_nan() {
                moved = true;
                *v = if v.is_nan() { 0.5 * (l + h) } else { c };
            }
        }
        moved
    }

    /// True when some coordinate sits on a face of the box.
    pub fn on_boundary(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .any(|(v, (l, h))| *v <= *l || *v >= *h)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.gen_range(*l..*h))
            .collect()
    }

    pub(crate) fn check(&self, what: &'static str, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(CpdError::DimensionMismatch { what, expected: self.dim(), got: p.len() });
        }
        for (i, v) in p.iter().enumerate() {
            if !(*v >= self.lo[i] && *v <= self.hi[i]) {
                return Err(CpdError::OutOfBounds {
                    what,
                    index: i,
                    value: *v,
                    lo: self.lo[i],
                    hi: self.hi[i],
                });
            }
        }
        Ok(())
    }
}

/// A drift that is linear in a coefficient vector, `b(x, β) = φ(x)·c(β)`,
/// with an invertible map `c ↦ β`. Only meaningful for scalar state.
pub trait LinearDrift {
    fn n_features(&self) -> usize;
    fn features(&self, x: f64, out: &mut [f64]);
    /// Maps least-squares coefficients back to β. `None` if the
    /// coefficients have no preimage (e.g. a zero rate).
    fn beta_from_coefficients(&self, c: &[f64]) -> Option<Vec<f64>>;
}

pub trait DiffusionModel: Send + Sync {
    fn name(&self) -> &str;
    /// d
    fn state_dim(&self) -> usize;
    /// r
    fn noise_dim(&self) -> usize;
    /// p
    fn alpha_dim(&self) -> usize;
    /// q
    fn beta_dim(&self) -> usize;
    fn alpha_space(&self) -> &ParamBox;
    fn beta_space(&self) -> &ParamBox;

    /// `out[d] = b(x, β)`
    fn drift(&self, x: &[f64], beta: &[f64], out: &mut [f64]);
    /// `out[d×r] = a(x, α)`
    fn diffusion(&self, x: &[f64], alpha: &[f64], out: &mut [f64]);
    /// `out[d×q] = ∂_β b(x, β)`
    fn drift_jac_beta(&self, x: &[f64], beta: &[f64], out: &mut [f64]);

    /// `out[p·d·d]` holds `∂_{α_ℓ} A(x, α)` for ℓ = 1..p, one d×d block each.
    /// Optional; returns `false` when not provided.
    fn diffusion_jac_alpha(&self, _x: &[f64], _alpha: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// True when `a(x, α) = α` with d = r = p = 1, enabling closed-form
    /// estimators.
    fn additive_scalar_noise(&self) -> bool {
        false
    }

    fn linear_drift(&self) -> Option<&dyn LinearDrift> {
        None
    }
}

/// Ornstein–Uhlenbeck: `b(x, (β, γ)) = −β(x − γ)`, `a(x, α) = α`.
#[derive(Debug, Clone)]
pub struct OuModel {
    alpha_space: ParamBox,
    beta_space: ParamBox,
}

impl Default for OuModel {
    fn default() -> Self {
        Self {
            alpha_space: ParamBox { lo: vec![1e-3], hi: vec![10.0] },
            beta_space: ParamBox { lo: vec![1e-3, -20.0], hi: vec![10.0, 20.0] },
        }
    }
}

impl OuModel {
    pub fn with_bounds(alpha_space: ParamBox, beta_space: ParamBox) -> Result<Self> {
        if alpha_space.dim() != 1 || beta_space.dim() != 2 {
            return Err(CpdError::invalid("OU bounds need p = 1, q = 2"));
        }
        if alpha_space.lo[0] <= 0.0 || beta_space.lo[0] <= 0.0 {
            return Err(CpdError::invalid("OU needs α > 0 and β > 0"));
        }
        Ok(Self { alpha_space, beta_space })
    }
}

impl DiffusionModel for OuModel {
    fn name(&self) -> &str {
        "ou"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn alpha_dim(&self) -> usize {
        1
    }
    fn beta_dim(&self) -> usize {
        2
    }
    fn alpha_space(&self) -> &ParamBox {
        &self.alpha_space
    }
    fn beta_space(&self) -> &ParamBox {
        &self.beta_space
    }
    fn drift(&self, x: &[f64], beta: &[f64], out: &mut [f64]) {
        out[0] = -beta[0] * (x[0] - beta[1]);
    }
    fn diffusion(&self, _x: &[f64], alpha: &[f64], out: &mut [f64]) {
        out[0] = alpha[0];
    }
    fn drift_jac_beta(&self, x: &[f64], beta: &[f64], out: &mut [f64]) {
        out[0] = -(x[0] - beta[1]);
        out[1] = beta[0];
    }
    fn diffusion_jac_alpha(&self, _x: &[f64], alpha: &[f64], out: &mut [f64]) -> bool {
        out[0] = 2.0 * alpha[0];
        true
    }
    fn additive_scalar_noise(&self) -> bool {
        true
    }
    fn linear_drift(&self) -> Option<&dyn LinearDrift> {
        Some(self)
    }
}

impl LinearDrift for OuModel {
    fn n_features(&self) -> usize {
        2
    }
    // −β(x−γ) = (βγ)·1 + β·(−x)
    fn features(&self, x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = -x;
    }
    fn beta_from_coefficients(&self, c: &[f64]) -> Option<Vec<f64>> {
        if c[1] == 0.0 || !c[1].is_finite() {
            return None;
        }
        Some(vec![c[1], c[0] / c[1]])
    }
}

/// Hyperbolic diffusion: `b(x, (β, γ)) = β − γx/√(1+x²)`, `a(x, α) = α`.
///
/// The default box keeps `|β| ≤ 1.5 ≤ γ`.
#[derive(Debug, Clone)]
pub struct HyperbolicModel {
    alpha_space: ParamBox,
    beta_space: ParamBox,
}

impl Default for HyperbolicModel {
    fn default() -> Self {
        Self {
            alpha_space: ParamBox { lo: vec![1e-3], hi: vec![10.0] },
            beta_space: ParamBox { lo: vec![-1.5, 1.5], hi: vec![1.5, 10.0] },
        }
    }
}

impl HyperbolicModel {
    pub fn with_bounds(alpha_space: ParamBox, beta_space: ParamBox) -> Result<Self> {
        if alpha_space.dim() != 1 || beta_space.dim() != 2 {
            return Err(CpdError::invalid("hyperbolic bounds need p = 1, q = 2"));
        }
        let max_abs_beta = beta_space.lo[0].abs().max(beta_space.hi[0].abs());
        if alpha_space.lo[0] <= 0.0 || max_abs_beta > beta_space.lo[1] {
            return Err(CpdError::invalid("hyperbolic needs α > 0 and |β| ≤ γ on the whole box"));
        }
        Ok(Self { alpha_space, beta_space })
    }
}

impl DiffusionModel for HyperbolicModel {
    fn name(&self) -> &str {
        "hyperbolic"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn alpha_dim(&self) -> usize {
        1
    }
    fn beta_dim(&self) -> usize {
        2
    }
    fn alpha_space(&self) -> &ParamBox {
        &self.alpha_space
    }
    fn beta_space(&self) -> &ParamBox {
        &self.beta_space
    }
    fn drift(&self, x: &[f64], beta: &[f64], out: &mut [f64]) {
        let x = x[0];
        out[0] = beta[0] - beta[1] * x / (1.0 + x * x).sqrt();
    }
    fn diffusion(&self, _x: &[f64], alpha: &[f64], out: &mut [f64]) {
        out[0] = alpha[0];
    }
    fn drift_jac_beta(&self, x: &[f64], _beta: &[f64], out: &mut [f64]) {
        let x = x[0];
        out[0] = 1.0;
        out[1] = -x / (1.0 + x * x).sqrt();
    }
    fn diffusion_jac_alpha(&self, _x: &[f64], alpha: &[f64], out: &mut [f64]) -> bool {
        out[0] = 2.0 * alpha[0];
        true
    }
    fn additive_scalar_noise(&self) -> bool {
        true
    }
    fn linear_drift(&self) -> Option<&dyn LinearDrift> {
        Some(self)
    }
}

impl LinearDrift for HyperbolicModel {
    fn n_features(&self) -> usize {
        2
    }
    fn features(&self, x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = -x / (1.0 + x * x).sqrt();
    }
    fn beta_from_coefficients(&self, c: &[f64]) -> Option<Vec<f64>> {
        Some(c.to_vec())
    }
}

/// Builtin models by CLI name.
pub fn builtin_model(name: &str) -> Result<Box<dyn DiffusionModel>> {
    match name {
        "ou" => Ok(Box::new(OuModel::default())),
        "hyperbolic" => Ok(Box::new(HyperbolicModel::default())),
        other => Err(CpdError::invalid(format!(
            "unknown model `{other}` (expected `ou` or `hyperbolic`)"
        ))),
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CpdError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

pub fn eval_drift(model: &dyn DiffusionModel, x: &[f64], beta: &[f64]) -> Result<DVector<f64>> {
    check_len("state", model.state_dim(), x.len())?;
    model.beta_space().check("beta", beta)?;
    let mut out = vec![0.0; model.state_dim()];
    model.drift(x, beta, &mut out);
    Ok(DVector::from_vec(out))
}

pub fn eval_diffusion(model: &dyn DiffusionModel, x: &[f64], alpha: &[f64]) -> Result<DMatrix<f64>> {
    check_len("state", model.state_dim(), x.len())?;
    check_len("alpha", model.alpha_dim(), alpha.len())?;
    let (d, r) = (model.state_dim(), model.noise_dim());
    let mut out = vec![0.0; d * r];
    model.diffusion(x, alpha, &mut out);
    Ok(DMatrix::from_row_slice(d, r, &out))
}

/// `A(x, α) = a aᵀ`, symmetric by construction.
pub fn eval_a(model: &dyn DiffusionModel, x: &[f64], alpha: &[f64]) -> Result<DMatrix<f64>> {
    let a = eval_diffusion(model, x, alpha)?;
    Ok(covariance_of(&a))
}

/// `a aᵀ` for an explicit coefficient matrix.
pub fn covariance_of(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, r) = a.shape();
    let mut row_major = Vec::with_capacity(d * r);
    for i in 0..d {
        for k in 0..r {
            row_major.push(a[(i, k)]);
        }
    }
    let mut out = vec![0.0; d * d];
    linalg::outer_self(&row_major, d, r, &mut out);
    DMatrix::from_row_slice(d, d, &out)
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport {
    pub probes: usize,
    /// max over probes and entries of |analytic − FD| / max(1, |FD|)
    pub max_drift_jac_error: f64,
    pub max_diffusion_jac_error: Option<f64>,
    pub diffusion_positive_definite: bool,
    pub passed: bool,
}

pub const DERIVATIVE_TOLERANCE: f64 = 1e-5;

/// Compares analytic parameter derivatives against central differences on
/// random probes drawn from the parameter boxes and `state_box`
/// (default `[−10, 10]^d`).
pub fn check_derivatives(
    model: &dyn DiffusionModel,
    n_probes: usize,
    seed: u64,
    state_box: Option<&ParamBox>,
) -> Result<DerivativeReport> {
    let (d, r, p, q) = (model.state_dim(), model.noise_dim(), model.alpha_dim(), model.beta_dim());
    let default_box = ParamBox { lo: vec![-10.0; d], hi: vec![10.0; d] };
    let state_box = state_box.unwrap_or(&default_box);
    check_len("state box", d, state_box.dim())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jac = vec![0.0; d * q];
    let mut bp = vec![0.0; d];
    let mut bm = vec![0.0; d];
    let mut a = vec![0.0; d * r];
    let mut big_a = vec![0.0; d * d];
    let mut da = vec![0.0; p * d * d];
    let mut ap = vec![0.0; d * d];
    let mut am = vec![0.0; d * d];

    let mut max_drift = 0.0f64;
    let mut max_diff: Option<f64> = None;
    let mut pd = true;

    for probe in 0..n_probes {
        let x = state_box.sample(&mut rng);
        let alpha = model.alpha_space().sample(&mut rng);
        let beta = model.beta_space().sample(&mut rng);

        model.drift_jac_beta(&x, &beta, &mut jac);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(CpdError::NonFinite { index: probe });
        }
        for l in 0..q {
            let step = 1e-6 * beta[l].abs().max(1.0);
            let mut b_hi = beta.clone();
            let mut b_lo = beta.clone();
            b_hi[l] += step;
            b_lo[l] -= step;
            model.drift(&x, &b_hi, &mut bp);
            model.drift(&x, &b_lo, &mut bm);
            for i in 0..d {
                let fd = (bp[i] - bm[i]) / (2.0 * step);
                if !fd.is_finite() {
                    return Err(CpdError::NonFinite { index: probe });
                }
                let err = (jac[i * q + l] - fd).abs() / fd.abs().max(1.0);
                max_drift = max_drift.max(err);
            }
        }

        model.diffusion(&x, &alpha, &mut a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(CpdError::NonFinite { index: probe });
        }
        linalg::outer_self(&a, d, r, &mut big_a);
        let mut chol = big_a.clone();
        pd &= linalg::cholesky(&mut chol, d);

        if model.diffusion_jac_alpha(&x, &alpha, &mut da) {
            let mut worst = max_diff.unwrap_or(0.0);
            for l in 0..p {
                let step = 1e-6 * alpha[l].abs().max(1.0);
                let mut a_hi = alpha.clone();
                let mut a_lo = alpha.clone();
                a_hi[l] += step;
                a_lo[l] -= step;
                model.diffusion(&x, &a_hi, &mut a);
                linalg::outer_self(&a, d, r, &mut ap);
                model.diffusion(&x, &a_lo, &mut a);
                linalg::outer_self(&a, d, r, &mut am);
                for k in 0..d * d {
                    let fd = (ap[k] - am[k]) / (2.0 * step);
                    let err = (da[l * d * d + k] - fd).abs() / fd.abs().max(1.0);
                    worst = worst.max(err);
                }
            }
            max_diff = Some(worst);
        }
    }

    let passed = max_drift <= DERIVATIVE_TOLERANCE
        && max_diff.map_or(true, |e| e <= DERIVATIVE_TOLERANCE)
        && pd;
    Ok(DerivativeReport {
        probes: n_probes,
        max_drift_jac_error: max_drift,
        max_diffusion_jac_error: max_diff,
        diffusion_positive_definite: pd,
        passed,
    })
}
