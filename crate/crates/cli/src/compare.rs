//! Deviation between two excitation-number series.
//!
//! Deviations are measured relative to the initial excitation number of the
//! reference series, which stays meaningful when both curves decay to zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::output::csv_err;
use crate::CliError;

/// `(t, n_exc)` samples in increasing time order.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub t: Vec<f64>,
    pub n_exc: Vec<f64>,
}

impl Series {
    /// Linear interpolation inside the sampled range.
    pub fn at(&self, t: f64) -> Option<f64> {
        let (first, last) = (*self.t.first()?, *self.t.last()?);
        let eps = 1e-9 * last.abs().max(1.0);
        if t < first - eps || t > last + eps {
            return None;
        }
        let k = self.t.partition_point(|&x| x < t);
        if k < self.t.len() && (self.t[k] - t).abs() <= eps {
            return Some(self.n_exc[k]);
        }
        if k == 0 {
            return Some(self.n_exc[0]);
        }
        if k == self.t.len() {
            return Some(self.n_exc[k - 1]);
        }
        let (t0, t1) = (self.t[k - 1], self.t[k]);
        let w = (t - t0) / (t1 - t0);
        Some(self.n_exc[k - 1] * (1.0 - w) + self.n_exc[k] * w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub max_relative: f64,
    pub rms_relative: f64,
    /// Time of the largest deviation.
    pub t_at_max: f64,
    pub points: usize,
}

/// Read the `t` and `n_exc` columns of a time-series CSV.
pub fn load_series(path: &Path) -> Result<Series, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::Format {
            path: path.to_path_buf(),
            msg: format!("missing column {name}"),
        })
    };
    let (ct, cn) = (col("t")?, col("n_exc")?);
    let mut s = Series { t: Vec::new(), n_exc: Vec::new() };
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let parse = |c: usize| -> Result<f64, CliError> {
            rec.get(c).unwrap_or("").parse().map_err(|e| CliError::Format {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", rec.position().map_or(0, |p| p.line())),
            })
        };
        s.t.push(parse(ct)?);
        s.n_exc.push(parse(cn)?);
    }
    if s.t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            msg: "times are not increasing".into(),
        });
    }
    Ok(s)
}

/// Compare `a` against the reference `b` at the times of `a` that lie in
/// both series and in `range` (if given).
pub fn compare_series(a: &Series, b: &Series, range: Option<(f64, f64)>) -> Result<Deviation, CliError> {
    let scale = b.n_exc.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let mut max = 0.0f64;
    let mut t_at_max = f64::NAN;
    let mut sum = 0.0;
    let mut points = 0usize;
    for (&t, &ya) in a.t.iter().zip(&a.n_exc) {
        if let Some((lo, hi)) = range {
            if t < lo || t > hi {
                continue;
            }
        }
        let Some(yb) = b.at(t) else { continue };
        let d = (ya - yb).abs() / scale;
        if d > max || points == 0 {
            max = d;
            t_at_max = t;
        }
        sum += d * d;
        points += 1;
    }
    if points == 0 {
        return Err(CliError::DisjointGrids);
    }
    Ok(Deviation {
        max_relative: max,
        rms_relative: (sum / points as f64).sqrt(),
        t_at_max,
        points,
    })
}
