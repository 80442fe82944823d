//! Synthetic data sets shaped like the studies' real inputs.

use std::path::Path;

use clap::ValueEnum;
use mirror_mcmc::glmm::{synthetic_epilepsy_table, synthetic_polypharmacy_table, Table};
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::synthetic_logistic;

use crate::error::{ExperimentError, Result};
use crate::output::ensure_dir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dataset {
    /// Binary response `y` with credit-scoring-shaped predictors `x1..xp`.
    Logistic,
    /// Seizure counts per subject and visit.
    Epilepsy,
    /// Yearly drug-use indicators per subject.
    Polypharmacy,
}

/// Builds the table; `rows` and `cols` mean observations and predictors for
/// the logistic set, subjects and visits (or years) for the GLMM sets.
pub fn synthetic_table(dataset: Dataset, rows: usize, cols: usize, seed: u64) -> Result<Table> {
    if rows == 0 || cols == 0 {
        return Err(ExperimentError::Config("synthetic data needs positive sizes".into()));
    }
    Ok(match dataset {
        Dataset::Logistic => {
            let (x, y) = synthetic_logistic(rows, cols, &mut stream_rng(seed, 3));
            let mut headers = vec!["y".to_string()];
            headers.extend((1..=cols).map(|j| format!("x{j}")));
            let mut t = Table::new(headers);
            for (i, yi) in y.iter().enumerate() {
                let mut row = vec![yi.to_string()];
                row.extend(x.row(i).iter().map(|v| v.to_string()));
                t.rows.push(row);
            }
            t
        }
        Dataset::Epilepsy => synthetic_epilepsy_table(rows, cols, seed),
        Dataset::Polypharmacy => synthetic_polypharmacy_table(rows, cols, seed),
    })
}

pub fn write_synthetic(dataset: Dataset, path: &Path, rows: usize, cols: usize, seed: u64) -> Result<()> {
    let table = synthetic_table(dataset, rows, cols, seed)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let file = std::fs::File::create(path)
        .map_err(|source| ExperimentError::Output { path: path.to_path_buf(), source })?;
    table.write_csv(file)?;
    Ok(())
}
