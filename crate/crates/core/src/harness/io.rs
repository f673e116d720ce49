//! Trajectory and coefficient files.
//!
//! Trajectories are CSV files with a header `t, name_1, ..., name_n`.
//! Coefficient files are CSV with header `k, name_1, ..., name_n` (one row
//! per Chebyshev index) plus a JSON sidecar carrying the interval and degree.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opb::{self, ChebSeries};

/// Samples read from a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub columns: Vec<String>,
    pub samples: Vec<(f64, DVector<f64>)>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("CSV: {e}"))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || header.get(0) != Some("t") {
        return Err(Error::InvalidInput(
            "trajectory CSV needs a header starting with 't' and at least one signal".into(),
        ));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut samples: Vec<(f64, DVector<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("row {}: {e}", line + 2)))?;
        if vals.len() != columns.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                vals.len(),
                columns.len() + 1
            )));
        }
        // Repeated time stamps keep the last row.
        if samples.last().is_some_and(|(t, _)| *t == vals[0]) {
            samples.pop();
        }
        samples.push((vals[0], DVector::from_column_slice(&vals[1..])));
    }
    Ok(Trajectory { columns, samples })
}

/// Interval, degree and column names of a coefficient file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSidecar {
    pub interval: (f64, f64),
    pub degree: usize,
    pub columns: Vec<String>,
    /// Number of samples that entered the fit.
    pub samples: usize,
}

/// Fits the part of `traj` inside `window` at the given degree.
pub fn fit_trajectory(traj: &Trajectory, degree: usize, window: (f64, f64)) -> Result<ChebSeries> {
    let (t0, t1) = window;
    if !(t0 < t1) {
        return Err(Error::DegenerateInterval { t0, t1 });
    }
    let slack = 1e-12 * (t1 - t0);
    let inside: Vec<(f64, DVector<f64>)> = traj
        .samples
        .iter()
        .filter(|(t, _)| *t >= t0 - slack && *t <= t1 + slack)
        .map(|(t, v)| (t.clamp(t0, t1), v.clone()))
        .collect();
    opb::fit_series(&inside, degree, t0, t1)
}

pub fn write_coefficients_csv(series: &ChebSeries, columns: &[String], path: &Path) -> Result<()> {
    if columns.len() != series.dim() {
        return Err(Error::Dimension(format!("{} column names for {} signals", columns.len(), series.dim())));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["k".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..=series.degree() {
        let mut row = vec![k.to_string()];
        row.extend(series.coeffs().column(k).iter().map(|v| format!("{v:e}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a coefficient CSV and its sidecar back into a series.
pub fn read_coefficients(csv_path: &Path, sidecar_path: &Path) -> Result<(ChebSeries, CoefficientSidecar)> {
    let side: CoefficientSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    let mut rdr = csv::Reader::from_path(csv_path).map_err(csv_err)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("coefficient CSV: {e}")))?;
        cols.push(vals);
    }
    if cols.len() != side.degree + 1 || cols.iter().any(|c| c.len() != side.columns.len()) {
        return Err(Error::Dimension("coefficient CSV does not match its sidecar".into()));
    }
    let m = DMatrix::from_fn(side.columns.len(), cols.len(), |r, k| cols[k][r]);
    Ok((ChebSeries::new(m, side.interval.0, side.interval.1)?, side))
}

/// Trajectory CSV in, coefficient CSV and sidecar out.
pub fn collect_file(
    csv_in: &Path,
    degree: usize,
    window: (f64, f64),
    csv_out: &Path,
    sidecar_out: &Path,
) -> Result<CoefficientSidecar> {
    let traj = read_trajectory_csv(csv_in)?;
    let series = fit_trajectory(&traj, degree, window)?;
    write_coefficients_csv(&series, &traj.columns, csv_out)?;
    let samples = traj.samples.iter().filter(|(t, _)| *t >= window.0 && *t <= window.1).count();
    let side = CoefficientSidecar { interval: window, degree, columns: traj.columns, samples };
    std::fs::write(sidecar_out, serde_json::to_string_pretty(&side)?)?;
    Ok(side)
}
