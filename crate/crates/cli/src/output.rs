//! CSV and JSON writers.
//!
//! Time series columns: `t, gamma_t, n_exc, rate, norm_sq, discarded, s_ef,
//! s_inout, neg, p0..pN, ps1, ps2, F, Rs, n_photons, output_flux, max_bond`.
//! Profile columns: `cell, x_over_d, x_front_over_d, density_r, density_l,
//! density, G2, G3, g2, g3`. Absent values are empty fields.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wqed_core::observables::{normalized_autocorrelation, FieldProfile, TimeSeriesRecord};

use crate::config::RunConfig;
use crate::CliError;

/// Everything needed to reproduce and audit a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: RunConfig,
    /// `collision` or `markov`.
    pub solver: String,
    pub version: String,
    pub ell: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub cumulative_discarded: f64,
    pub final_norm_sq: f64,
    pub max_bond_dim: usize,
    /// First step at which a bond reached `chi_max`.
    pub bond_saturation_step: Option<usize>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn series_header(n_emitters: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "gamma_t", "n_exc", "rate", "norm_sq", "discarded", "s_ef", "s_inout", "neg"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..=n_emitters).map(|k| format!("p{k}")));
    h.extend(["ps1", "ps2", "F", "Rs", "n_photons", "output_flux", "max_bond"].iter().map(|s| s.to_string()));
    h
}

pub fn series_row(r: &TimeSeriesRecord, n_emitters: usize) -> Vec<String> {
    let mut row = vec![
        r.t.to_string(),
        r.gamma_t.to_string(),
        r.n_exc.to_string(),
        opt(r.rate),
        r.norm_sq.to_string(),
        r.discarded.to_string(),
        opt(r.s_ef),
        opt(r.s_inout),
        opt(r.negativity),
    ];
    for k in 0..=n_emitters {
        row.push(opt(r.sector_populations.as_ref().and_then(|p| p.get(k).copied())));
    }
    row.push(opt(r.singlets.map(|s| s.0)));
    row.push(opt(r.singlets.map(|s| s.1)));
    row.push(opt(r.survival));
    row.push(opt(r.survival_rate));
    row.push(opt(r.n_photons));
    row.push(opt(r.output_flux));
    row.push(r.max_bond.to_string());
    row
}

pub fn write_series(path: &Path, records: &[TimeSeriesRecord], n_emitters: usize) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(series_header(n_emitters)).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record(series_row(r, n_emitters)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_profile(path: &Path, profile: &FieldProfile) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["cell", "x_over_d", "x_front_over_d", "density_r", "density_l", "density", "G2", "G3", "g2", "g3"])
        .map_err(|e| csv_err(path, e))?;
    let density: Vec<f64> = profile.cells.iter().map(|c| c.density()).collect();
    let norm = |m: usize, g: Option<Vec<f64>>| -> Vec<Option<f64>> {
        match g {
            Some(g) => normalized_autocorrelation(&g, &density, m),
            None => vec![None; density.len()],
        }
    };
    let g2raw: Option<Vec<f64>> = profile.cells.iter().map(|c| c.g2_raw).collect();
    let g3raw: Option<Vec<f64>> = profile.cells.iter().map(|c| c.g3_raw).collect();
    let g2 = norm(2, g2raw);
    let g3 = norm(3, g3raw);
    for (k, c) in profile.cells.iter().enumerate() {
        w.write_record([
            c.cell.to_string(),
            c.x_over_d.to_string(),
            profile.distance_from_left_front(c).to_string(),
            c.density_r.to_string(),
            c.density_l.to_string(),
            c.density().to_string(),
            opt(c.g2_raw),
            opt(c.g3_raw),
            opt(g2[k]),
            opt(g3[k]),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_metadata(path: &Path, meta: &RunMetadata) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_metadata(path: &Path) -> Result<RunMetadata, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}
