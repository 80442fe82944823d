//! Closed-form acceptance curves on N(0, 1) and their Monte Carlo check.

use mirror_mcmc::adaptation::MomentEstimate;
use mirror_mcmc::diagnostics::{pjump_mala_analytic, pjump_rw_analytic};
use mirror_mcmc::kernels::{run_chain, KernelKind};
use mirror_mcmc::linalg::Matrix;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::Mvn;
use serde::Serialize;

use super::{job_stream, row_key};
use crate::chain::{build_kernel, run_parallel, run_variant};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{write_csv, write_table, Row};
use crate::variant::Variant;

/// Closed-form acceptance rate of a kernel on N(0, 1) with exact moments.
pub fn analytic_pjump(kind: KernelKind, epsilon: f64) -> Result<Option<f64>> {
    Ok(match kind {
        KernelKind::RandomWalk | KernelKind::Mirror => Some(pjump_rw_analytic(epsilon)?),
        KernelKind::Mala | KernelKind::MirrorMala => Some(pjump_mala_analytic(epsilon)?),
        KernelKind::Hmc | KernelKind::MirrorHmc => None,
    })
}

/// Replicate-averaged simulated acceptance rate next to the closed form.
#[derive(Debug, Clone, Serialize)]
pub struct PjumpCheck {
    pub kernel: String,
    pub epsilon: f64,
    pub replicates: usize,
    pub pjump_mc: f64,
    pub pjump_analytic: Option<f64>,
    pub abs_diff: Option<f64>,
}

/// Writes `pjump_analytic.csv` over the ε grid and, when `iterations > 0`,
/// simulates every kind at each check scale into `pjump_check.csv`.
pub fn run_pjump(cfg: &ExperimentConfig) -> Result<(Vec<Row>, Vec<PjumpCheck>)> {
    let curve: Vec<Vec<f64>> = cfg
        .epsilons
        .iter()
        .map(|&e| Ok(vec![e, pjump_rw_analytic(e)?, pjump_mala_analytic(e)?]))
        .collect::<Result<_>>()?;
    write_table(
        &cfg.out.join("pjump_analytic.csv"),
        &["epsilon", "pjump_rw_mirror", "pjump_mala_mirror_mala"],
        &curve,
    )?;

    let kinds: Vec<KernelKind> = cfg.kinds.iter().map(|k| k.parse()).collect::<mirror_mcmc::Result<_>>()?;
    let mut jobs = Vec::new();
    for &eps in &cfg.check_epsilons {
        for &kind in &kinds {
            for rep in 0..cfg.replicates {
                jobs.push((kind, eps, rep));
            }
        }
    }
    let target = Mvn::standard(1);
    let moments = MomentEstimate::from_known(vec![0.0], Matrix::identity(1))?;
    let rows = run_parallel(cfg.threads, &jobs, |&(kind, eps, rep)| {
        let v = Variant::fixed(kind, eps);
        let stream = job_stream(&[&"pjump", &kind.name(), &eps, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        let start = if cfg.burnin > 0 {
            let warm = run_chain(&build_kernel(&v, eps, &moments), &target, &[0.0], cfg.burnin, &mut rng)?;
            warm.final_state.position
        } else {
            vec![0.0]
        };
        let run = run_variant(&v, &target, &moments, &start, cfg.iterations, cfg.tune_settings(), &mut rng)?;
        let key = row_key(cfg, "normal", &v.label, kind.name(), eps, false, 1.0, 1, stream, rep, cfg.burnin);
        Ok(Row::new(key, &run.report, cfg.timing))
    })?;

    let mut checks = Vec::new();
    for &eps in &cfg.check_epsilons {
        for &kind in &kinds {
            let rs: Vec<&Row> = rows.iter().filter(|r| r.kind == kind.name() && r.epsilon == eps).collect();
            let mc = rs.iter().map(|r| r.pjump).sum::<f64>() / rs.len() as f64;
            let analytic = analytic_pjump(kind, eps)?;
            checks.push(PjumpCheck {
                kernel: kind.name().into(),
                epsilon: eps,
                replicates: rs.len(),
                pjump_mc: mc,
                pjump_analytic: analytic,
                abs_diff: analytic.map(|a| (mc - a).abs()),
            });
        }
    }
    write_csv(&cfg.out.join("pjump_check.csv"), &checks)?;
    Ok((rows, checks))
}
