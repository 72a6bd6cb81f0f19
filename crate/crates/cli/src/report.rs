// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment outputs: per-replication rows, aggregates, figure data and a
//! generated plotting script.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use diffusion_cpd::changepoint::{
    compute_j_alpha, compute_j_beta, ou_j_alpha_analytic, ou_j_beta_analytic, sample_limit_argmin, InvariantSampler,
    LimitLawConfig,
};
use diffusion_cpd::experiment::{histogram, proportion, summarize, ExperimentResult, Magnitude, Row, Summary};
use diffusion_cpd::model::builtin_model;
use diffusion_cpd::simulate::sample_brownian_bridge_sup;
use serde::Serialize;

/// Grid and size of the bridge sample drawn as the reference CDF.
const REFERENCE_GRID: usize = 2_000;
const REFERENCE_REPS: usize = 5_000;
const BINS: usize = 40;

#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub quantity: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

pub fn aggregates(rows: &[Row]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    let mut push = |name: &str, s: Summary| out.push(Aggregate { quantity: name.into(), count: s.count, mean: s.mean, sd: s.sd });
    macro_rules! column {
        ($($f:ident),*) => {
            $(push(stringify!($f), summarize(rows.iter().filter_map(|r| r.$f)));)*
        };
    }
    column!(t_alpha, alpha1, alpha2, tau_alpha, epsilon1, t1_left, t2_left, t1_right, t2_right, tau_beta, same_point);
    macro_rules! vector {
        ($($f:ident),*) => {
            $(
                let q = rows.iter().filter_map(|r| r.$f.as_ref().map(Vec::len)).max().unwrap_or(0);
                for k in 0..q {
                    push(&format!("{}_{}", stringify!($f), k + 1), summarize(rows.iter().filter_map(|r| r.$f.as_ref()?.get(k).copied())));
                }
            )*
        };
    }
    vector!(beta_check1, beta_check2, beta_hat1, beta_hat2);
    // rejection shares are means of 0/1 indicators
    macro_rules! share {
        ($($f:ident),*) => {
            $(
                let v: Vec<Option<bool>> = rows.iter().map(|r| r.$f).collect();
                let count = v.iter().flatten().count();
                out.push(Aggregate { quantity: stringify!($f).into(), count, mean: proportion(v), sd: None });
            )*
        };
    }
    share!(t_alpha_reject, t1_left_reject, t2_left_reject, t1_right_reject, t2_right_reject);
    let ok = rows.iter().filter(|r| r.error.is_none()).count();
    let mut branches: Vec<&str> = rows.iter().filter_map(|r| r.branch.as_deref()).collect();
    branches.sort_unstable();
    branches.dedup();
    for b in branches {
        let hits = rows.iter().filter(|r| r.branch.as_deref() == Some(b)).count();
        out.push(Aggregate { quantity: format!("branch:{b}"), count: ok, mean: Some(hits as f64 / ok.max(1) as f64), sd: None });
    }
    out.push(Aggregate { quantity: "failed".into(), count: rows.len() - ok, mean: None, sd: None });
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(f)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.16e}"))
}

pub fn write_rows(path: &Path, rows: &[Row], q: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(Row::header(q))?;
    for r in rows {
        w.write_record(r.record(q))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregates(path: &Path, aggs: &[Aggregate]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["quantity", "count", "mean", "sd"])?;
    for a in aggs {
        w.write_record([a.quantity.clone(), a.count.to_string(), opt(a.mean), opt(a.sd)])?;
    }
    w.flush()?;
    Ok(())
}

fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64
}

/// Sorted statistic values with their EDF and the bridge-supremum CDF.
fn write_edf(path: &Path, values: &[f64], reference: &[f64]) -> Result<()> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mut w = csv_writer(path)?;
    w.write_record(["value", "edf", "reference_cdf"])?;
    for (i, x) in v.iter().enumerate() {
        w.write_record([format!("{x:.16e}"), format!("{:.16e}", (i + 1) as f64 / v.len() as f64), format!("{:.16e}", empirical_cdf(reference, *x))])?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram of `values` next to a reference sample rescaled to the same
/// total count.
fn write_histogram(path: &Path, values: &[f64], reference: &[f64]) -> Result<()> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let data = histogram(values, BINS, lo, hi);
    let refs = histogram(reference, BINS, lo, hi);
    let weight = if reference.is_empty() { 0.0 } else { values.len() as f64 / reference.len() as f64 };
    let mut w = csv_writer(path)?;
    w.write_record(["left", "right", "count", "reference"])?;
    for ((l, r, c), (_, _, rc)) in data.into_iter().zip(refs) {
        w.write_record([format!("{l:.16e}"), format!("{r:.16e}"), c.to_string(), format!("{:.16e}", rc as f64 * weight)])?;
    }
    w.flush()?;
    Ok(())
}

/// One figure: a data file and how to draw it.
struct Figure {
    file: String,
    kind: &'static str,
    title: String,
}

/// Writes figure data and `plot.py`; returns warnings for figures skipped.
pub fn write_figures(dir: &Path, result: &ExperimentResult) -> Result<Vec<String>> {
    let rows = &result.rows;
    let spec = &result.spec;
    let truth = &result.truth;
    let mut notes = Vec::new();
    let mut figures = Vec::new();
    let q = builtin_model(&spec.model)?.beta_dim();
    let bridge1 = sample_brownian_bridge_sup(1, REFERENCE_GRID, REFERENCE_REPS, 1)?;
    let bridge_q = if q == 1 { bridge1.clone() } else { sample_brownian_bridge_sup(q, REFERENCE_GRID, REFERENCE_REPS, 2)? };

    let stats: [(&str, Vec<f64>, &Vec<f64>); 5] = [
        ("t_alpha", rows.iter().filter_map(|r| r.t_alpha).collect(), &bridge1),
        ("t1_left", rows.iter().filter_map(|r| r.t1_left).collect(), &bridge1),
        ("t1_right", rows.iter().filter_map(|r| r.t1_right).collect(), &bridge1),
        ("t2_left", rows.iter().filter_map(|r| r.t2_left).collect(), &bridge_q),
        ("t2_right", rows.iter().filter_map(|r| r.t2_right).collect(), &bridge_q),
    ];
    for (name, values, reference) in stats {
        if values.is_empty() {
            continue;
        }
        let file = format!("edf_{name}.csv");
        write_edf(&dir.join(&file), &values, reference)?;
        figures.push(Figure { file, kind: "edf", title: format!("{name}: EDF vs bridge supremum") });
    }

    let model = builtin_model(&spec.model)?;
    let horizon = truth.n as f64 * truth.h;
    // diffusion change point, scaled by n·δ² when δ shrinks
    let tau_a: Vec<f64> = rows.iter().filter_map(|r| r.tau_alpha).collect();
    if !tau_a.is_empty() {
        let delta = (truth.alpha1[0] - truth.alpha2[0]).abs();
        let (scaled, reference) = match spec.alpha_change {
            Magnitude::Power(_) if delta > 0.0 => {
                let e: Vec<f64> = truth.alpha1.iter().zip(&truth.alpha2).map(|(a, b)| (a - b) / delta).collect();
                // the regime that does not move with n
                let limit = if spec.model == "ou" { &truth.alpha1 } else { &truth.alpha2 };
                let j = if spec.model == "ou" {
                    ou_j_alpha_analytic(limit[0], &e)?
                } else {
                    compute_j_alpha(model.as_ref(), limit, &truth.beta1, &e, &InvariantSampler::path(truth.x0.clone(), 3), 20_000)?
                };
                let law = sample_limit_argmin(j, &LimitLawConfig::default())?;
                let scale = truth.n as f64 * delta * delta;
                (tau_a.iter().map(|t| scale * (t - truth.tau_alpha)).collect::<Vec<_>>(), law.draws)
            }
            _ => (tau_a.iter().map(|t| truth.n as f64 * (t - truth.tau_alpha)).collect(), Vec::new()),
        };
        write_histogram(&dir.join("hist_tau_alpha.csv"), &scaled, &reference)?;
        figures.push(Figure { file: "hist_tau_alpha.csv".into(), kind: "hist", title: "diffusion change point (scaled)".into() });
    }

    // drift change point, scaled by T·ϑ² when ϑ shrinks
    let tau_b: Vec<f64> = rows.iter().filter_map(|r| r.tau_beta).collect();
    if let (Some(tb), false) = (truth.tau_beta, tau_b.is_empty()) {
        let theta: f64 = truth.beta1.iter().zip(&truth.beta2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let reference = match spec.drift_change {
            Magnitude::Power(_) if theta > 0.0 && tb != truth.tau_alpha => {
                let e: Vec<f64> = truth.beta1.iter().zip(&truth.beta2).map(|(a, b)| (a - b) / theta).collect();
                let alpha = if tb < truth.tau_alpha { &truth.alpha1 } else { &truth.alpha2 };
                let limit = if spec.model == "ou" { &truth.beta2 } else { &truth.beta1 };
                let j = if spec.model == "ou" {
                    ou_j_beta_analytic(alpha[0], limit[0], &e)?
                } else {
                    compute_j_beta(model.as_ref(), alpha, limit, &e, &InvariantSampler::path(truth.x0.clone(), 4), 20_000)?
                };
                Some(sample_limit_argmin(j, &LimitLawConfig::default())?.draws)
            }
            _ => None,
        };
        let scale = match reference {
            Some(_) => horizon * theta * theta,
            None => horizon,
        };
        if reference.is_none() {
            notes.push("drift change point histogram has no limit-law reference (fixed change or same point)".into());
        }
        let scaled: Vec<f64> = tau_b.iter().map(|t| scale * (t - tb)).collect();
        write_histogram(&dir.join("hist_tau_beta.csv"), &scaled, reference.as_deref().unwrap_or(&[]))?;
        figures.push(Figure { file: "hist_tau_beta.csv".into(), kind: "hist", title: "drift change point (scaled)".into() });
    }

    let sp: Vec<f64> = rows.iter().filter_map(|r| r.same_point).collect();
    if !sp.is_empty() {
        write_histogram(&dir.join("hist_same_point.csv"), &sp, &[])?;
        figures.push(Figure { file: "hist_same_point.csv".into(), kind: "hist", title: "same-point statistic".into() });
    }

    write_plot_script(&dir.join("plot.py"), &figures)?;
    Ok(notes)
}

fn write_plot_script(path: &Path, figures: &[Figure]) -> Result<()> {
    let mut s = String::from(
        "#!/usr/bin/env python3\n\
         # Generated by cpdiff. Run from this directory: python3 plot.py\n\
         import csv\n\
         import matplotlib\n\
         matplotlib.use(\"Agg\")\n\
         import matplotlib.pyplot as plt\n\n\
         def load(name):\n    \
             with open(name, newline=\"\") as f:\n        \
                 rows = list(csv.DictReader(f))\n    \
             return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}\n\n\
         def edf(name, title):\n    \
             d = load(name)\n    \
             if not d:\n        return\n    \
             fig, ax = plt.subplots()\n    \
             ax.step(d[\"value\"], d[\"edf\"], where=\"post\", color=\"black\", label=\"empirical\")\n    \
             ax.plot(d[\"value\"], d[\"reference_cdf\"], color=\"red\", label=\"reference\")\n    \
             ax.set_title(title)\n    \
             ax.legend()\n    \
             fig.savefig(name.replace(\".csv\", \".png\"), dpi=120)\n\n\
         def hist(name, title):\n    \
             d = load(name)\n    \
             if not d:\n        return\n    \
             fig, ax = plt.subplots()\n    \
             width = [r - l for l, r in zip(d[\"left\"], d[\"right\"])]\n    \
             ax.bar(d[\"left\"], d[\"count\"], width=width, align=\"edge\", color=\"0.7\", label=\"empirical\")\n    \
             if any(d[\"reference\"]):\n        \
                 mids = [l + w / 2 for l, w in zip(d[\"left\"], width)]\n        \
                 ax.plot(mids, d[\"reference\"], color=\"red\", label=\"reference\")\n    \
             ax.set_title(title)\n    \
             ax.legend()\n    \
             fig.savefig(name.replace(\".csv\", \".png\"), dpi=120)\n\n",
    );
    for f in figures {
        s.push_str(&format!("{}({:?}, {:?})\n", f.kind, f.file, f.title));
    }
    let mut out = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    out.write_all(s.as_bytes())?;
    Ok(())
}
