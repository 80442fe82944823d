//! Result rows, replicate summaries and file emission.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mirror_mcmc::diagnostics::DiagnosticsReport;
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

/// One chain's diagnostics with the provenance needed to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub target: String,
    pub kernel: String,
    pub kind: String,
    pub epsilon: f64,
    /// The scale was tuned on a pilot chain rather than fixed.
    pub tuned: bool,
    pub c: f64,
    pub d: usize,
    pub seed: u64,
    /// RNG stream of this chain under `seed`.
    pub stream: u64,
    pub replicate: usize,
    pub iterations: usize,
    pub burnin: usize,
    pub pjump: f64,
    pub accept_rate: f64,
    pub rho1_mean: f64,
    #[serde(rename = "E_mean")]
    pub e_mean: f64,
    pub ess_mean: f64,
    pub seconds: Option<f64>,
    #[serde(rename = "E_per_second")]
    pub e_per_second: Option<f64>,
    /// Coordinates whose chain never moved.
    pub degenerate: usize,
}

/// Provenance of one chain.
#[derive(Debug, Clone)]
pub struct RowKey {
    pub experiment: String,
    pub target: String,
    pub kernel: String,
    pub kind: String,
    pub epsilon: f64,
    pub tuned: bool,
    pub c: f64,
    pub d: usize,
    pub seed: u64,
    pub stream: u64,
    pub replicate: usize,
    pub iterations: usize,
    pub burnin: usize,
}

impl Row {
    pub fn new(key: RowKey, report: &DiagnosticsReport, timing: bool) -> Self {
        Self {
            experiment: key.experiment,
            target: key.target,
            kernel: key.kernel,
            kind: key.kind,
            epsilon: key.epsilon,
            tuned: key.tuned,
            c: key.c,
            d: key.d,
            seed: key.seed,
            stream: key.stream,
            replicate: key.replicate,
            iterations: key.iterations,
            burnin: key.burnin,
            pjump: report.pjump,
            accept_rate: report.accept_rate,
            rho1_mean: report.rho1_mean,
            e_mean: report.efficiency_mean,
            ess_mean: report.ess_mean,
            seconds: timing.then_some(report.seconds),
            e_per_second: timing.then(|| report.efficiency_per_second()),
            degenerate: report.degenerate.len(),
        }
    }
}

/// Replicate average for one (target, kernel, ε, c, d) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub target: String,
    pub kernel: String,
    pub kind: String,
    /// Mean over replicates, which differs from each replicate's for tuned scales.
    pub epsilon: f64,
    pub tuned: bool,
    pub c: f64,
    pub d: usize,
    pub replicates: usize,
    pub pjump: f64,
    pub accept_rate: f64,
    pub rho1_mean: f64,
    #[serde(rename = "E_mean")]
    pub e_mean: f64,
    /// Standard deviation of `E_mean` across replicates; empty for one replicate.
    #[serde(rename = "E_sd")]
    pub e_sd: Option<f64>,
    pub ess_mean: f64,
    pub seconds: Option<f64>,
    #[serde(rename = "E_per_second")]
    pub e_per_second: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.map(|v| mean(v.into_iter()))
}

/// Averages rows over replicates, keeping first-seen cell order. Cells are
/// keyed by target, kernel, c, d and, for fixed scales, ε.
pub fn summarize_rows(rows: &[Row]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, u64, u64, usize)> = Vec::new();
    let mut cells: BTreeMap<(String, String, u64, u64, usize), Vec<&Row>> = BTreeMap::new();
    for r in rows {
        let eps = if r.tuned { 0 } else { r.epsilon.to_bits() };
        let key = (r.target.clone(), r.kernel.clone(), eps, r.c.to_bits(), r.d);
        let cell = cells.entry(key.clone()).or_default();
        if cell.is_empty() {
            order.push(key);
        }
        cell.push(r);
    }
    order
        .iter()
        .map(|k| {
            let rs = &cells[k];
            let first = rs[0];
            let e = mean(rs.iter().map(|r| r.e_mean));
            let e_sd = (rs.len() > 1).then(|| {
                let ss: f64 = rs.iter().map(|r| (r.e_mean - e).powi(2)).sum();
                (ss / (rs.len() - 1) as f64).sqrt()
            });
            SummaryRow {
                experiment: first.experiment.clone(),
                target: first.target.clone(),
                kernel: first.kernel.clone(),
                kind: first.kind.clone(),
                epsilon: mean(rs.iter().map(|r| r.epsilon)),
                tuned: first.tuned,
                c: first.c,
                d: first.d,
                replicates: rs.len(),
                pjump: mean(rs.iter().map(|r| r.pjump)),
                accept_rate: mean(rs.iter().map(|r| r.accept_rate)),
                rho1_mean: mean(rs.iter().map(|r| r.rho1_mean)),
                e_mean: e,
                e_sd,
                ess_mean: mean(rs.iter().map(|r| r.ess_mean)),
                seconds: mean_opt(rs.iter().map(|r| r.seconds)),
                e_per_second: mean_opt(rs.iter().map(|r| r.e_per_second)),
            }
        })
        .collect()
}

/// Stable 64-bit FNV-1a hash used to derive per-chain RNG streams from a
/// provenance string, so a chain's stream does not depend on scheduling.
pub fn stream_id(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Output { path: dir.to_path_buf(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })
}

pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Writes a header plus numeric rows.
pub fn write_table(path: &Path, headers: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(headers)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })?;
    w.flush().map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })?;
    w.flush().map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })
}

/// Writes `rows.csv`, `summary.csv` and `summary.json` into `dir`.
pub fn write_rows_and_summary(dir: &Path, rows: &[Row]) -> Result<Vec<SummaryRow>> {
    write_csv(&dir.join("rows.csv"), rows)?;
    let summary = summarize_rows(rows);
    write_csv(&dir.join("summary.csv"), &summary)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kernel: &str, rep: usize, e: f64) -> Row {
        Row {
            experiment: "x".into(),
            target: "t".into(),
            kernel: kernel.into(),
            kind: "rw".into(),
            epsilon: 0.5,
            tuned: false,
            c: 1.0,
            d: 1,
            seed: 1,
            stream: 0,
            replicate: rep,
            iterations: 100,
            burnin: 0,
            pjump: e / 10.0,
            accept_rate: 0.5,
            rho1_mean: -0.5,
            e_mean: e,
            ess_mean: 100.0 * e,
            seconds: None,
            e_per_second: None,
            degenerate: 0,
        }
    }

    #[test]
    fn summary_is_replicate_mean() {
        let rows = vec![row("b", 0, 1.0), row("a", 0, 2.0), row("b", 1, 3.0), row("a", 1, 4.0)];
        let s = summarize_rows(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].kernel, "b");
        assert_eq!(s[0].e_mean, 2.0);
        assert_eq!(s[0].pjump, 0.2);
        assert_eq!(s[1].e_mean, 3.0);
        assert!((s[1].e_sd.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[0].seconds, None);
    }

    #[test]
    fn tuned_scales_share_a_cell() {
        let mut a = row("t", 0, 1.0);
        let mut b = row("t", 1, 1.0);
        a.tuned = true;
        b.tuned = true;
        b.epsilon = 0.7;
        let s = summarize_rows(&[a, b]);
        assert_eq!(s.len(), 1);
        assert!((s[0].epsilon - 0.6).abs() < 1e-12);
    }

    #[test]
    fn stream_id_is_fnv1a() {
        assert_eq!(stream_id(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(stream_id("a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(stream_id("rw|0"), stream_id("rw|1"));
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("a", 0, 1.5)];
        write_csv(&dir.path().join("r.csv"), &rows).unwrap();
        let back: Vec<Row> = read_csv(&dir.path().join("r.csv")).unwrap();
        assert_eq!(back, rows);
    }
}
