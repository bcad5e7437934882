//! Artifact serialization: plot-ready CSV and JSON renderings of waveforms,
//! ensembles, correlation matrices, and profiles. All floating-point output
//! uses the shortest round-trip representation, so identical inputs yield
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Result;
use crate::twa::EnsembleRecord;
use crate::waveform::DriveWaveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(path, &format!("{}\n", serde_json::to_string_pretty(value)?))
}

/// One waveform sample row per line: `t,value`.
pub fn waveform_csv(waveform: &DriveWaveform, samples: usize) -> String {
    let tau = waveform.tau_b();
    let mut out = String::from("t,value\n");
    for i in 0..samples {
        let t = i as f64 * tau / samples as f64;
        let _ = writeln!(out, "{t},{}", waveform.value(t));
    }
    out
}

/// Ensemble records, one row per (realization, site).
pub fn ensemble_csv(records: &[EnsembleRecord]) -> String {
    let mut out = String::from("realization,site,n_plus,n_zero,n_minus,fx\n");
    for rec in records {
        for site in 0..rec.fx.len() {
            let _ = writeln!(
                out,
                "{},{site},{},{},{},{}",
                rec.realization, rec.n_plus[site], rec.n_zero[site], rec.n_minus[site],
                rec.fx[site]
            );
        }
    }
    out
}

/// Sparse matrix rendering: `row,col,value`. NaN entries are written as
/// empty values so spreadsheet tools flag rather than misread them.
pub fn matrix_csv(matrix: &DMatrix<f64>) -> String {
    let mut out = String::from("row,col,value\n");
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            let v = matrix[(i, j)];
            if v.is_nan() {
                let _ = writeln!(out, "{i},{j},");
            } else {
                let _ = writeln!(out, "{i},{j},{v}");
            }
        }
    }
    out
}

pub fn matrix_json(matrix: &DMatrix<f64>) -> serde_json::Value {
    let rows: Vec<Vec<serde_json::Value>> = (0..matrix.nrows())
        .map(|i| {
            (0..matrix.ncols())
                .map(|j| {
                    let v = matrix[(i, j)];
                    if v.is_nan() {
                        serde_json::Value::Null
                    } else {
                        json!(v)
                    }
                })
                .collect()
        })
        .collect();
    json!(rows)
}

/// Distance profile rows: `d,value`.
pub fn profile_csv(profile: &[(i64, f64)]) -> String {
    let mut out = String::from("d,value\n");
    for &(d, v) in profile {
        if v.is_nan() {
            let _ = writeln!(out, "{d},");
        } else {
            let _ = writeln!(out, "{d},{v}");
        }
    }
    out
}

/// Structure-factor rows: `k_index,k,value`.
pub fn structure_factor_csv(k: &[f64], values: &[f64]) -> String {
    let mut out = String::from("k_index,k,value\n");
    for (i, (&ki, &v)) in k.iter().zip(values).enumerate() {
        let _ = writeln!(out, "{i},{ki},{v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_csv_layout_and_determinism() {
        let rec = EnsembleRecord {
            realization: 3,
            seed: 9,
            periods: 2.0,
            n_plus: vec![0.5, 1.5],
            n_zero: vec![9999.0, 9998.0],
            n_minus: vec![0.5, 1.5],
            fx: vec![1.25, -0.5],
        };
        let csv = ensemble_csv(&[rec.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "realization,site,n_plus,n_zero,n_minus,fx");
        assert_eq!(lines[1], "3,0,0.5,9999,0.5,1.25");
        assert_eq!(lines.len(), 3);
        assert_eq!(csv, ensemble_csv(&[rec]));
    }

    #[test]
    fn matrix_csv_flags_nan() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        m[(1, 0)] = 0.25;
        let csv = matrix_csv(&m);
        assert!(csv.contains("0,1,\n"));
        assert!(csv.contains("1,0,0.25\n"));
        let j = matrix_json(&m);
        assert!(j[0][1].is_null());
        assert_eq!(j[1][0], 0.25);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
        assert_eq!("json".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
        assert!("yaml".parse::<OutputFormat>().is_err());
    }

    #[test]
    fn write_text_creates_directories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/deep/file.csv");
        write_text(&path, "a,b\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n");
    }
}
