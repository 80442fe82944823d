//! Multivariate Gaussian targets: the N(0, I_d) grid and the correlated
//! inverse-Wishart target.

use std::collections::HashMap;

use mirror_mcmc::adaptation::MomentEstimate;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::{make_mvn, Mvn, TargetDensity};

use super::{inverse_wishart_identity, job_stream, row_key, write_matrix};
use crate::chain::{burnin_moments, run_parallel, run_variant};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::Result;
use crate::output::{write_table, Row};

/// The correlated target of dimension `d`: `N(0, Σ)` with `Σ ~ IW(d, I)`,
/// drawn from a stream fixed by the master seed.
pub fn correlated_target(seed: u64, d: usize) -> Result<Mvn> {
    let mut rng = stream_rng(seed, job_stream(&[&"corr-gaussian-sigma", &d]));
    let sigma = inverse_wishart_identity(d, d as f64, &mut rng)?;
    Ok(make_mvn(vec![0.0; d], sigma)?)
}

fn target_for(cfg: &ExperimentConfig, d: usize) -> Result<Mvn> {
    match cfg.experiment {
        Experiment::CorrGaussian => correlated_target(cfg.seed, d),
        _ => Ok(Mvn::standard(d)),
    }
}

fn target_name(cfg: &ExperimentConfig, d: usize) -> String {
    match cfg.experiment {
        Experiment::CorrGaussian => format!("iw-gaussian-{d}"),
        _ => format!("std-gaussian-{d}"),
    }
}

/// Moments shared by every kernel of one (d, replicate): exact, or from an
/// adaptive random-walk burn-in started at 0.
pub fn gaussian_moments(
    cfg: &ExperimentConfig,
    target: &Mvn,
    rep: usize,
) -> Result<(MomentEstimate, Vec<f64>)> {
    let d = target.dim();
    if cfg.oracle_moments {
        let m = MomentEstimate::from_known(target.mean().to_vec(), target.covariance().clone())?;
        return Ok((m, target.mean().to_vec()));
    }
    let stream = job_stream(&[&"burnin", &target_name(cfg, d), &cfg.burnin, &cfg.burnin_segment, &rep]);
    let mut rng = stream_rng(cfg.seed, stream);
    burnin_moments(
        target,
        &vec![0.0; d],
        cfg.burnin,
        cfg.burnin_segment_len(),
        cfg.burnin_epsilon,
        true,
        &mut rng,
    )
}

pub fn run_gaussian(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    let variants = cfg.variants()?;
    let mut targets = HashMap::new();
    for &d in &cfg.dims {
        let t = target_for(cfg, d)?;
        if cfg.experiment == Experiment::CorrGaussian {
            write_matrix(&cfg.out.join(format!("sigma_d{d}.csv")), t.covariance())?;
            let mu: Vec<Vec<f64>> = t.mean().iter().map(|&m| vec![m]).collect();
            write_table(&cfg.out.join(format!("mu_d{d}.csv")), &["mu"], &mu)?;
        }
        targets.insert(d, t);
    }
    let burn_jobs: Vec<(usize, usize)> =
        cfg.dims.iter().flat_map(|&d| (0..cfg.replicates).map(move |r| (d, r))).collect();
    let burn = run_parallel(cfg.threads, &burn_jobs, |&(d, rep)| gaussian_moments(cfg, &targets[&d], rep))?;
    let burn: HashMap<(usize, usize), (MomentEstimate, Vec<f64>)> = burn_jobs.into_iter().zip(burn).collect();

    let mut jobs = Vec::new();
    for &d in &cfg.dims {
        for (vi, _) in variants.iter().enumerate() {
            for rep in 0..cfg.replicates {
                jobs.push((d, vi, rep));
            }
        }
    }
    let burnin = if cfg.oracle_moments { 0 } else { cfg.burnin };
    run_parallel(cfg.threads, &jobs, |&(d, vi, rep)| {
        let v = &variants[vi];
        let name = target_name(cfg, d);
        let (moments, start) = &burn[&(d, rep)];
        let stream = job_stream(&[&cfg.experiment.name(), &name, &v.label, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        let run =
            run_variant(v, &targets[&d], moments, start, cfg.iterations, cfg.tune_settings(), &mut rng)?;
        let key = row_key(
            cfg,
            &name,
            &v.label,
            v.kind.name(),
            run.epsilon,
            v.epsilon().is_none(),
            v.c,
            d,
            stream,
            rep,
            burnin,
        );
        Ok(Row::new(key, &run.report, cfg.timing))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlated_target_is_reproducible() {
        let a = correlated_target(3, 6).unwrap();
        let b = correlated_target(3, 6).unwrap();
        assert_eq!(a.covariance(), b.covariance());
        assert_ne!(a.covariance(), correlated_target(4, 6).unwrap().covariance());
    }
}
