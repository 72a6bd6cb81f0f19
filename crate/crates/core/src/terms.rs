// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-increment quantities shared by the contrasts, the CUSUM statistics
//! and the change-point scans. Each function walks `(lo, hi]` once and
//! returns one value (or one q-vector) per increment, in index order.

use crate::error::{CpdError, Result};
use crate::linalg;
use crate::model::DiffusionModel;
use crate::path::{Interval, Path};

/// Scratch space for one observation: `a(x, α)`, the Cholesky factor of
/// `A = a aᵀ`, the drift and its Jacobian.
pub(crate) struct Frame<'m> {
    model: &'m dyn DiffusionModel,
    d: usize,
    r: usize,
    q: usize,
    a: Vec<f64>,
    chol: Vec<f64>,
    logdet: f64,
    drift: Vec<f64>,
    jac: Vec<f64>,
    dx: Vec<f64>,
    work: Vec<f64>,
    lu: Vec<f64>,
}

impl<'m> Frame<'m> {
    pub(crate) fn new(model: &'m dyn DiffusionModel) -> Self {
        let (d, r, q) = (model.state_dim(), model.noise_dim(), model.beta_dim());
        Self {
            model,
            d,
            r,
            q,
            a: vec![0.0; d * r],
            chol: vec![0.0; d * d],
            logdet: 0.0,
            drift: vec![0.0; d],
            jac: vec![0.0; d * q],
            dx: vec![0.0; d],
            work: vec![0.0; d.max(q)],
            lu: vec![0.0; d * d],
        }
    }

    /// Factorizes `A(x, α)`; `false` if it is not positive definite.
    fn set_diffusion(&mut self, x: &[f64], alpha: &[f64]) -> bool {
        self.model.diffusion(x, alpha, &mut self.a);
        linalg::outer_self(&self.a, self.d, self.r, &mut self.chol);
        if !linalg::cholesky(&mut self.chol, self.d) {
            return false;
        }
        self.logdet = linalg::cholesky_logdet(&self.chol, self.d);
        self.logdet.is_finite()
    }

    /// `dxᵀ A⁻¹ dx` for the loaded residual.
    fn residual_inv_quad(&mut self) -> f64 {
        self.work[..self.d].copy_from_slice(&self.dx);
        linalg::forward_solve(&self.chol, self.d, &mut self.work[..self.d]);
        self.work[..self.d].iter().map(|w| w * w).sum()
    }

    /// `dx ← ΔX_i − h b(X_{t_{i−1}}, β)` (or just ΔX_i when `beta` is None).
    fn load_residual(&mut self, path: &Path, i: usize, beta: Option<&[f64]>) {
        path.increment(i, &mut self.dx);
        if let Some(beta) = beta {
            self.model.drift(path.obs(i - 1), beta, &mut self.drift);
            let h = path.h();
            for k in 0..self.d {
                self.dx[k] -= h * self.drift[k];
            }
        }
    }
}

fn check_dims(path: &Path, model: &dyn DiffusionModel, iv: Interval) -> Result<()> {
    if path.dim() != model.state_dim() {
        return Err(CpdError::DimensionMismatch {
            what: "path dimension",
            expected: model.state_dim(),
            got: path.dim(),
        });
    }
    path.check_interval(iv)
}

fn check_param(what: &'static str, expected: usize, got: &[f64]) -> Result<()> {
    if got.len() != expected {
        return Err(CpdError::DimensionMismatch { what, expected, got: got.len() });
    }
    Ok(())
}

/// `F_i(α) = tr(A⁻¹ (ΔX_i)^{⊗2} / h) + log det A`
pub fn f_terms(path: &Path, model: &dyn DiffusionModel, iv: Interval, alpha: &[f64]) -> Result<Vec<f64>> {
    quadratic_terms(path, model, iv, alpha, None, true)
}

/// `η_i(α) = tr(A⁻¹ (ΔX_i)^{⊗2} / h)`
pub fn eta_terms(path: &Path, model: &dyn DiffusionModel, iv: Interval, alpha: &[f64]) -> Result<Vec<f64>> {
    quadratic_terms(path, model, iv, alpha, None, false)
}

/// `G_i(β|α) = tr(A⁻¹ (ΔX_i − h b)^{⊗2} / h)`
pub fn g_terms(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    beta: &[f64],
) -> Result<Vec<f64>> {
    check_param("beta", model.beta_dim(), beta)?;
    quadratic_terms(path, model, iv, alpha, Some(beta), false)
}

fn quadratic_terms(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    beta: Option<&[f64]>,
    with_logdet: bool,
) -> Result<Vec<f64>> {
    check_dims(path, model, iv)?;
    check_param("alpha", model.alpha_dim(), alpha)?;
    let mut frame = Frame::new(model);
    let inv_h = 1.0 / path.h();
    let mut out = Vec::with_capacity(iv.len());
    for i in iv.indices() {
        if !frame.set_diffusion(path.obs(i - 1), alpha) {
            return Err(CpdError::SingularDiffusion { index: i - 1 });
        }
        frame.load_residual(path, i, beta);
        let mut v = frame.residual_inv_quad() * inv_h;
        if with_logdet {
            v += frame.logdet;
        }
        out.push(v);
    }
    Ok(out)
}

/// `ξ_i = 1ᵀ a⁻¹(X_{t_{i−1}}, α) (ΔX_i − h b(X_{t_{i−1}}, β))`; needs r = d.
pub fn xi_terms(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    beta: &[f64],
) -> Result<Vec<f64>> {
    check_dims(path, model, iv)?;
    check_square_noise(model)?;
    check_param("alpha", model.alpha_dim(), alpha)?;
    check_param("beta", model.beta_dim(), beta)?;
    let mut frame = Frame::new(model);
    let d = frame.d;
    let mut out = Vec::with_capacity(iv.len());
    for i in iv.indices() {
        let x = path.obs(i - 1);
        model.diffusion(x, alpha, &mut frame.a);
        frame.load_residual(path, i, Some(beta));
        frame.lu.copy_from_slice(&frame.a);
        if !linalg::lu_solve(&mut frame.lu, d, &mut frame.dx) {
            return Err(CpdError::SingularDiffusion { index: i - 1 });
        }
        out.push(frame.dx.iter().sum());
    }
    Ok(out)
}

pub(crate) fn check_square_noise(model: &dyn DiffusionModel) -> Result<()> {
    if model.noise_dim() != model.state_dim() {
        return Err(CpdError::NoiseDimension {
            state_dim: model.state_dim(),
            noise_dim: model.noise_dim(),
        });
    }
    Ok(())
}

/// Score-type increments `ζ_i = ∂_β bᵀ A⁻¹ (ΔX_i − h b)` (flattened m × q)
/// and the Gram sum `Σ ∂_β bᵀ A⁻¹ ∂_β b` (q × q, row-major).
pub fn zeta_and_gram(
    path: &Path,
    model: &dyn DiffusionModel,
    iv: Interval,
    alpha: &[f64],
    beta: &[f64],
    want_zeta: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(path, model, iv)?;
    check_param("alpha", model.alpha_dim(), alpha)?;
    check_param("beta", model.beta_dim(), beta)?;
    let mut frame = Frame::new(model);
    let (d, q) = (frame.d, frame.q);
    let mut zeta = Vec::with_capacity(if want_zeta { iv.len() * q } else { 0 });
    let mut gram = vec![0.0; q * q];
    // L⁻¹ ∂_β b, column by column (d × q)
    let mut whitened = vec![0.0; d * q];
    let mut col = vec![0.0; d];
    for i in iv.indices() {
        let x = path.obs(i - 1);
        if !frame.set_diffusion(x, alpha) {
            return Err(CpdError::SingularDiffusion { index: i - 1 });
        }
        model.drift_jac_beta(x, beta, &mut frame.jac);
        for l in 0..q {
            for k in 0..d {
                col[k] = frame.jac[k * q + l];
            }
            linalg::forward_solve(&frame.chol, d, &mut col);
            for k in 0..d {
                whitened[k * q + l] = col[k];
            }
        }
        for l1 in 0..q {
            for l2 in 0..=l1 {
                let mut s = 0.0;
                for k in 0..d {
                    s += whitened[k * q + l1] * whitened[k * q + l2];
                }
                gram[l1 * q + l2] += s;
            }
        }
        if want_zeta {
            frame.load_residual(path, i, Some(beta));
            linalg::forward_solve(&frame.chol, d, &mut frame.dx);
            for l in 0..q {
                let mut s = 0.0;
                for k in 0..d {
                    s += whitened[k * q + l] * frame.dx[k];
                }
                zeta.push(s);
            }
        }
    }
    for l1 in 0..q {
        for l2 in 0..l1 {
            gram[l2 * q + l1] = gram[l1 * q + l2];
        }
    }
    Ok((zeta, gram))
}
