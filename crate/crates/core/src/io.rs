// SPDX-License-Identifier: MIT OR Apache-2.0

//! Path CSV format: header `t,x1,...,xd`, one row per observation, values
//! written with 17 significant digits so that a write/read cycle is exact.

use std::io::{Read, Write};

use crate::error::{CpdError, Result};
use crate::path::Path;

/// Relative tolerance on the spacing of the time column.
const SPACING_TOL: f64 = 1e-6;

pub fn write_path_csv<W: Write>(path: &Path, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = path.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(d + 1);
    for i in 0..=path.n() {
        row.clear();
        row.push(format!("{:.16e}", i as f64 * path.h()));
        row.extend(path.obs(i).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CpdError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CpdError::Io(io),
        other => CpdError::Data { line, message: format!("{other:?}") },
    }
}

/// Reads a path; `expected_dim` checks the header against a model.
///
/// The step size is taken from the first two time stamps and every other
/// spacing must agree with it.
pub fn read_path_csv<R: Read>(input: R, expected_dim: Option<usize>) -> Result<Path> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.is_empty() || &header[0] != "t" {
        return Err(CpdError::Data { line: 1, message: "header must start with `t`".into() });
    }
    let d = header.len() - 1;
    for (k, name) in header.iter().skip(1).enumerate() {
        if name != format!("x{}", k + 1) {
            return Err(CpdError::Data { line: 1, message: format!("expected column `x{}`, found `{name}`", k + 1) });
        }
    }
    if d == 0 {
        return Err(CpdError::Data { line: 1, message: "no state columns".into() });
    }
    if let Some(expected) = expected_dim {
        if expected != d {
            return Err(CpdError::DimensionMismatch { what: "CSV state columns", expected, got: d });
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(CpdError::Data { line, message: format!("expected {} fields, found {}", d + 1, rec.len()) });
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CpdError::Data { line, message: format!("cannot parse `{field}` as a number") })?;
            if !v.is_finite() {
                return Err(CpdError::Data { line, message: format!("non-finite value `{field}`") });
            }
            if k == 0 {
                times.push((v, line));
            } else {
                values.push(v);
            }
        }
    }
    if times.len() < 3 {
        return Err(CpdError::Data { line: times.last().map_or(1, |t| t.1), message: "need at least 3 observations".into() });
    }
    let h = times[1].0 - times[0].0;
    if !(h > 0.0) {
        return Err(CpdError::Data { line: times[1].1, message: "time stamps must increase".into() });
    }
    for w in times.windows(2) {
        if ((w[1].0 - w[0].0) - h).abs() > SPACING_TOL * h + 8.0 * f64::EPSILON * w[1].0.abs() {
            return Err(CpdError::Data { line: w[1].1, message: "time stamps are not equidistant".into() });
        }
    }
    // recover h from the whole span to avoid first-difference rounding
    let n = times.len() - 1;
    let h = (times[n].0 - times[0].0) / n as f64;
    Path::new(h, d, values)
}
