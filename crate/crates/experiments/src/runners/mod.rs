//! One runner per experiment. Every runner writes its files under the
//! configured output directory and returns the per-chain rows it produced.

mod burnin;
mod glmm;
mod grid;
mod logistic;
mod oned;
mod pjump;
mod trajectory;

use std::path::PathBuf;

use mirror_mcmc::linalg::{invert_spd, Matrix};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{ExperimentError, Result};
use crate::output::{ensure_dir, stream_id, write_rows_and_summary, write_text, Row, RowKey, SummaryRow};

pub use burnin::run_burnin_study;
pub use glmm::{run_glmm, GlmmResult};
pub use grid::run_gaussian;
pub use logistic::{read_logistic_csv, run_logistic};

#[cfg(test)]
pub(crate) fn logistic_csv_for_tests(path: &std::path::Path) -> Result<(Matrix, Vec<f64>, Vec<String>)> {
    read_logistic_csv(path, "y")
}
pub use oned::{run_oned, table1, CellOptimum};
pub use pjump::{run_pjump, PjumpCheck};
pub use trajectory::{run_trajectory, TrajectoryResult};

/// Rows and summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out: PathBuf,
    pub rows: Vec<Row>,
    pub summary: Vec<SummaryRow>,
}

/// Runs the configured experiment and writes all of its outputs, including
/// the resolved configuration as `config.toml`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    let rows = match cfg.experiment {
        Experiment::PjumpAnalytic => run_pjump(cfg)?.0,
        Experiment::OnedSweep | Experiment::CSweep => run_oned(cfg)?,
        Experiment::GaussianGrid | Experiment::CorrGaussian => run_gaussian(cfg)?,
        Experiment::Logistic => run_logistic(cfg)?,
        Experiment::Glmm => run_glmm(cfg)?.rows,
        Experiment::TrajectoryDemo => run_trajectory(cfg)?.rows,
        Experiment::BurninStudy => run_burnin_study(cfg)?,
    };
    let summary = write_rows_and_summary(&cfg.out, &rows)?;
    Ok(RunReport { out: cfg.out.clone(), rows, summary })
}

/// Stream for a chain identified by its provenance fields.
pub(crate) fn job_stream(parts: &[&dyn std::fmt::Display]) -> u64 {
    let key: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
    stream_id(&key.join("|"))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn row_key(
    cfg: &ExperimentConfig,
    target: &str,
    kernel: &str,
    kind: &str,
    epsilon: f64,
    tuned: bool,
    c: f64,
    d: usize,
    stream: u64,
    replicate: usize,
    burnin: usize,
) -> RowKey {
    RowKey {
        experiment: cfg.experiment.name().into(),
        target: target.into(),
        kernel: kernel.into(),
        kind: kind.into(),
        epsilon,
        tuned,
        c,
        d,
        seed: cfg.seed,
        stream,
        replicate,
        iterations: cfg.iterations,
        burnin,
    }
}

/// Draws from an inverse-Wishart distribution with `nu` degrees of freedom and
/// identity scale, via the Bartlett decomposition of the Wishart precision.
pub fn inverse_wishart_identity<R: Rng + ?Sized>(d: usize, nu: f64, rng: &mut R) -> Result<Matrix> {
    if nu <= (d as f64) - 1.0 {
        return Err(ExperimentError::Config(format!("inverse-Wishart needs nu > d - 1, got nu={nu}, d={d}")));
    }
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(nu - i as f64).expect("positive degrees of freedom");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let w = a.matmul(&a.transpose()).expect("square factors");
    Ok(invert_spd(&w.symmetrized()).map_err(mirror_mcmc::Error::from)?.symmetrized())
}

/// Writes a matrix as a headerless CSV.
pub(crate) fn write_matrix(path: &std::path::Path, m: &Matrix) -> Result<()> {
    let mut text = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mirror_mcmc::rng::stream_rng;

    #[test]
    fn inverse_wishart_mean_matches_theory() {
        // E[Σ] = S / (ν − d − 1) for ν > d + 1.
        let (d, nu) = (3, 10.0);
        let mut rng = stream_rng(8, 0);
        let reps = 20_000;
        let mut acc = Matrix::zeros(d, d);
        for _ in 0..reps {
            let s = inverse_wishart_identity(d, nu, &mut rng).unwrap();
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += s[(i, j)] / reps as f64;
                }
            }
        }
        let expect = 1.0 / (nu - d as f64 - 1.0);
        for i in 0..d {
            assert!((acc[(i, i)] - expect).abs() < 0.1 * expect, "{:?}", acc);
            for j in 0..i {
                assert!(acc[(i, j)].abs() < 0.1 * expect);
            }
        }
    }

    #[test]
    fn job_streams_depend_on_every_field() {
        let a = job_stream(&[&"t", &"rw", &0.5, &1]);
        assert_eq!(a, job_stream(&[&"t", &"rw", &0.5, &1]));
        assert_ne!(a, job_stream(&[&"t", &"rw", &0.5, &2]));
        assert_ne!(a, job_stream(&[&"t", &"mala", &0.5, &1]));
    }
}
