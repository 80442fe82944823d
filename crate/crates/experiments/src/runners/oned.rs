//! Scale and reflection-coefficient sweeps on the five one-dimensional targets.

use mirror_mcmc::adaptation::{default_rw_epsilon, MomentEstimate};
use mirror_mcmc::kernels::KernelKind;
use mirror_mcmc::linalg::Matrix;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::{make_oned_target, OneDTarget};
use serde::Serialize;

use super::{job_stream, row_key};
use crate::chain::{burnin_moments, run_parallel, run_variant};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::Result;
use crate::output::{summarize_rows, write_csv, Row, SummaryRow};
use crate::variant::Variant;

/// `μ*`, `σ*²` and a start in the sampling coordinate. Without oracle moments
/// a random walk of `burnin` steps from 0 with scale `burnin_eps` supplies them.
pub fn oned_moments(
    target: OneDTarget,
    cfg: &ExperimentConfig,
    burnin_eps: f64,
    replicate: usize,
) -> Result<(MomentEstimate, Vec<f64>)> {
    if cfg.oracle_moments {
        let (m, v) = target.sampling_moments();
        return Ok((MomentEstimate::from_known(vec![m], Matrix::from_diagonal(&[v]))?, vec![m]));
    }
    let stream = job_stream(&[&"burnin", &target.name(), &burnin_eps, &cfg.burnin, &replicate]);
    let mut rng = stream_rng(cfg.seed, stream);
    burnin_moments(&target, &[0.0], cfg.burnin, cfg.burnin, Some(burnin_eps), false, &mut rng)
}

/// Scale of the burn-in random walk unless `burnin-epsilon` is set: the
/// c-sweep reuses the chain's ε, the ε-sweep uses the standard 1-D scale.
fn default_burnin_epsilon(cfg: &ExperimentConfig, eps: f64) -> f64 {
    match cfg.experiment {
        Experiment::CSweep => eps,
        _ => default_rw_epsilon(1),
    }
}

/// Runs the ε-sweep (`oned-sweep`) or the c-sweep (`c-sweep`).
pub fn run_oned(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    let kinds: Vec<KernelKind> = cfg.kinds.iter().map(|k| k.parse()).collect::<mirror_mcmc::Result<_>>()?;
    let cs: Vec<f64> = if cfg.experiment == Experiment::CSweep { cfg.cs.clone() } else { vec![1.0] };
    let mut jobs = Vec::new();
    for &t in &cfg.targets {
        for &kind in &kinds {
            for &eps in &cfg.epsilons {
                for &c in &cs {
                    for rep in 0..cfg.replicates {
                        jobs.push((t, kind, eps, c, rep));
                    }
                }
            }
        }
    }
    let rows = run_parallel(cfg.threads, &jobs, |&(t, kind, eps, c, rep)| {
        let target = make_oned_target(t)?;
        let (moments, start) = oned_moments(
            target,
            cfg,
            cfg.burnin_epsilon.unwrap_or_else(|| default_burnin_epsilon(cfg, eps)),
            rep,
        )?;
        let v = Variant::fixed(kind, eps).with_c(c);
        let stream = job_stream(&[&cfg.experiment.name(), &target.name(), &kind.name(), &eps, &c, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        let run = run_variant(&v, &target, &moments, &start, cfg.iterations, cfg.tune_settings(), &mut rng)?;
        let burnin = if cfg.oracle_moments { 0 } else { cfg.burnin };
        let key =
            row_key(cfg, target.name(), kind.name(), kind.name(), eps, false, c, 1, stream, rep, burnin);
        Ok(Row::new(key, &run.report, cfg.timing))
    })?;
    let summary = summarize_rows(&rows);
    let optima = table1(&summary, cfg.experiment == Experiment::CSweep);
    let name = if cfg.experiment == Experiment::CSweep { "c_optimum.csv" } else { "table1.csv" };
    write_csv(&cfg.out.join(name), &optima)?;
    Ok(rows)
}

/// Best cell of a sweep: the grid point with the largest replicate-averaged `E`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOptimum {
    pub target: String,
    pub kernel: String,
    pub epsilon: f64,
    pub c: f64,
    pub pjump: f64,
    pub rho1_mean: f64,
    #[serde(rename = "E_mean")]
    pub e_mean: f64,
    #[serde(rename = "E_sd")]
    pub e_sd: Option<f64>,
    pub seconds: Option<f64>,
    #[serde(rename = "E_per_second")]
    pub e_per_second: Option<f64>,
}

/// Argmax of `E` per (target, kernel), over ε or, with `over_c`, over c per ε.
pub fn table1(summary: &[SummaryRow], over_c: bool) -> Vec<CellOptimum> {
    let mut best: Vec<CellOptimum> = Vec::new();
    for s in summary {
        let same = |b: &CellOptimum| {
            b.target == s.target && b.kernel == s.kernel && (!over_c || b.epsilon == s.epsilon)
        };
        let cell = CellOptimum {
            target: s.target.clone(),
            kernel: s.kernel.clone(),
            epsilon: s.epsilon,
            c: s.c,
            pjump: s.pjump,
            rho1_mean: s.rho1_mean,
            e_mean: s.e_mean,
            e_sd: s.e_sd,
            seconds: s.seconds,
            e_per_second: s.e_per_second,
        };
        match best.iter_mut().find(|b| same(b)) {
            Some(b) if s.e_mean > b.e_mean => *b = cell,
            Some(_) => {}
            None => best.push(cell),
        }
    }
    best
}
