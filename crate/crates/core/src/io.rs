//! Report files: per-run trajectory CSV, sweep CSV, and the JSON manifest.
//!
//! All floating point numbers are written with 17 significant digits so that
//! files round-trip bit-exactly and identical runs produce byte-identical
//! output regardless of worker count.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::SweepReport;
use crate::slowsolver::Trajectory;

/// 17-significant-digit scientific form used in every report file.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a trajectory as CSV with header `t,a_1..a_n,norm_H,norm_V`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n_modes = traj.coeffs.first().map(|c| c.len()).unwrap_or(0);
    let mut header = String::from("t");
    for k in 1..=n_modes {
        header.push_str(&format!(",a_{k}"));
    }
    header.push_str(",norm_H,norm_V");
    writeln!(out, "{header}")?;
    for (i, t) in traj.times.iter().enumerate() {
        let mut row = format_float(*t);
        for a in traj.coeffs[i].iter() {
            row.push(',');
            row.push_str(&format_float(*a));
        }
        row.push(',');
        row.push_str(&format_float(traj.norm_h[i]));
        row.push(',');
        row.push_str(&format_float(traj.norm_v[i]));
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Writes the per-path sweep results as CSV with header
/// `epsilon,path,error,s1,s3` (s3 is per-epsilon and repeated on each row).
pub fn write_sweep_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epsilon,path,error,s1,s3")?;
    for stats in &report.stats {
        for (path_idx, (err, s1)) in stats.errors.iter().zip(&stats.s1_values).enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                format_float(stats.epsilon),
                path_idx,
                format_float(*err),
                format_float(*s1),
                format_float(stats.s3),
            )?;
        }
    }
    Ok(())
}

/// Provenance manifest accompanying every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub crate_version: String,
    pub base_seed: u64,
    pub wall_time_s: f64,
    /// Human-readable command or context that produced the files.
    pub produced_by: String,
}

impl Manifest {
    pub fn new(config_hash: &str, base_seed: u64, wall_time_s: f64, produced_by: &str) -> Self {
        Manifest {
            config_hash: config_hash.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            base_seed,
            wall_time_s,
            produced_by: produced_by.to_string(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)
            .map_err(|e| crate::error::SimError::Config(format!("manifest serialization: {e}")))?;
        Ok(())
    }
}

/// One parsed sweep CSV row: (epsilon, path, error, s1, s3).
pub type SweepRow = (f64, usize, f64, f64, f64);

/// Reads a sweep CSV back into (epsilon, path, error, s1, s3) rows.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let content = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            if line.trim() != "epsilon,path,error,s1,s3" {
                return Err(crate::error::SimError::Config(format!(
                    "unexpected sweep CSV header: {line}"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(crate::error::SimError::Config(format!(
                "bad sweep CSV row: {line}"
            )));
        }
        let parse =
            |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| {
                    crate::error::SimError::Config(format!("bad float in sweep CSV: {s}"))
                })
            };
        rows.push((
            parse(parts[0])?,
            parts[1].trim().parse().map_err(|_| {
                crate::error::SimError::Config(format!("bad path index: {}", parts[1]))
            })?,
            parse(parts[2])?,
            parse(parts[3])?,
            parse(parts[4])?,
        ));
    }
    Ok(rows)
}
