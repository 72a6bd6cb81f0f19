// SPDX-License-Identifier: MIT OR Apache-2.0

//! Box-constrained Nelder–Mead with multistart. Trial points are projected
//! onto the box; non-finite objective values count as `+∞`.

use serde::{Deserialize, Serialize};

use crate::model::ParamBox;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub multistarts: usize,
    pub max_iter: usize,
    /// Relative spread of simplex values at convergence.
    pub ftol: f64,
    /// Simplex diameter at convergence, relative to the box width.
    pub xtol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { multistarts: 8, max_iter: 500, ftol: 1e-8, xtol: 1e-7, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: OptimizerTrace,
}

/// Minimizes `f` over `bounds`. The first start is `x0` when given, the
/// rest are uniform in the box. Returns the best vertex over all starts;
/// `converged` reports whether that start met the tolerances.
pub fn minimize<F>(f: F, bounds: &ParamBox, x0: Option<&[f64]>, cfg: &OptimizerConfig) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let safe = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut rng = rng::stream(cfg.seed);
    let mut best: Option<Minimum> = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    for s in 0..cfg.multistarts.max(1) {
        let start = match (s, x0) {
            (0, Some(x)) => {
                let mut x = x.to_vec();
                bounds.clamp(&mut x);
                x
            }
            _ => bounds.sample(&mut rng),
        };
        let run = nelder_mead(&safe, bounds, start, cfg);
        iterations += run.trace.iterations;
        evaluations += run.trace.evaluations;
        if best.as_ref().map_or(true, |b| run.value < b.value) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    best.trace.iterations = iterations;
    best.trace.evaluations = evaluations;
    best
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, bounds: &ParamBox, start: Vec<f64>, cfg: &OptimizerConfig) -> Minimum {
    let n = start.len();
    let width: Vec<f64> = bounds.lo.iter().zip(&bounds.hi).map(|(l, h)| h - l).collect();
    let mut evals = 0;
    let mut eval = |x: &[f64]| {
        evals += 1;
        f(x)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.clone());
    for k in 0..n {
        let mut v = start.clone();
        let step = 0.1 * width[k];
        v[k] = if v[k] + step <= bounds.hi[k] { v[k] + step } else { v[k] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let project = |mut x: Vec<f64>| {
        bounds.clamp(&mut x);
        x
    };

    let mut converged = false;
    let mut iter = 0;
    while iter < cfg.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (f_best, f_worst) = (values[0], values[n]);
        let spread = (f_worst - f_best).abs();
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).zip(&width).map(|((a, b), w)| (a - b).abs() / w))
            .fold(0.0, f64::max);
        if f_best.is_finite()
            && spread <= cfg.ftol * (f_best.abs() + 1e-12)
            && diameter <= cfg.xtol
        {
            converged = true;
            break;
        }
        iter += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for k in 0..n {
                centroid[k] += v[k] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            project((0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect())
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let x = along(-0.5);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(0.5);
            let v = eval(&x);
            (x, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let x: Vec<f64> = (0..n).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
            values[i] = eval(&x);
            simplex[i] = x;
        }
    }
    let ibest = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum {
        x: simplex[ibest].clone(),
        value: values[ibest],
        trace: OptimizerTrace { iterations: iter, evaluations: evals, converged },
    }
}
