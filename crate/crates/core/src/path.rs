// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};

/// Equidistant observations `X_{t_0}, …, X_{t_n}` with `t_i = i·h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    h: f64,
    dim: usize,
    /// (n+1) × d, row-major
    values: Vec<f64>,
}

impl Path {
    pub fn new(h: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(CpdError::invalid(format!("step size must be positive, got {h}")));
        }
        if dim == 0 || values.len() % dim != 0 {
            return Err(CpdError::invalid("observation buffer is not a whole number of rows"));
        }
        let rows = values.len() / dim;
        if rows < 3 {
            return Err(CpdError::invalid(format!("need n ≥ 2 increments, got {}", rows.saturating_sub(1))));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CpdError::NonFinite { index: pos / dim });
        }
        Ok(Self { h, dim, values })
    }

    pub fn from_scalar(h: f64, xs: Vec<f64>) -> Result<Self> {
        Self::new(h, 1, xs)
    }

    /// Number of increments.
    pub fn n(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// T = n·h
    pub fn horizon(&self) -> f64 {
        self.n() as f64 * self.h
    }

    /// X_{t_i}
    pub fn obs(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// ΔX_i = X_{t_i} − X_{t_{i−1}} for i ≥ 1.
    pub fn increment(&self, i: usize, out: &mut [f64]) {
        let d = self.dim;
        let (prev, cur) = (&self.values[(i - 1) * d..i * d], &self.values[i * d..(i + 1) * d]);
        for k in 0..d {
            out[k] = cur[k] - prev[k];
        }
    }

    pub fn full(&self) -> Interval {
        Interval { lo: 0, hi: self.n() }
    }

    pub fn check_interval(&self, iv: Interval) -> Result<()> {
        if iv.lo >= iv.hi || iv.hi > self.n() {
            return Err(CpdError::invalid(format!(
                "interval ({}, {}] is empty or exceeds n = {}",
                iv.lo,
                iv.hi,
                self.n()
            )));
        }
        Ok(())
    }
}

/// Half-open range of increment indices `(lo, hi]`; increment `i` spans
/// `[t_{i−1}, t_i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: usize,
    pub hi: usize,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi.saturating_sub(self.lo)
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        (self.lo + 1)..=self.hi
    }

    pub fn split_at(&self, k: usize) -> (Interval, Interval) {
        (Interval::new(self.lo, k), Interval::new(k, self.hi))
    }
}
