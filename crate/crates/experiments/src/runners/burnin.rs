//! Efficiency as a function of the burn-in length used to estimate `μ*` and `Σ*`.

use mirror_mcmc::adaptation::MomentEstimate;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::{make_mvn, Mvn};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::trajectory::demo_target;
use super::{inverse_wishart_identity, job_stream, row_key};
use crate::chain::{burnin_moments, run_parallel, run_variant};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{write_csv, Row};

/// The study's targets: the bivariate demo normal for `d = 2`, otherwise
/// `N(μ, Σ)` with `μ ~ N(0, I)` and `Σ ~ IW(d, I)` drawn from the master seed.
pub fn study_target(seed: u64, d: usize) -> Result<Mvn> {
    if d == 2 {
        return Ok(demo_target());
    }
    let mut rng = stream_rng(seed, job_stream(&[&"burnin-study-target", &d]));
    let mu: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let sigma = inverse_wishart_identity(d, d as f64, &mut rng)?;
    Ok(make_mvn(mu, sigma)?)
}

/// Root mean squared error over the mean and the distinct covariance entries.
pub fn moment_rmse(est: &MomentEstimate, target: &Mvn) -> f64 {
    let d = target.mean().len();
    let mut ss = 0.0;
    let mut n = 0usize;
    for i in 0..d {
        ss += (est.mu_star[i] - target.mean()[i]).powi(2);
        n += 1;
        for j in 0..=i {
            ss += (est.sigma_star[(i, j)] - target.covariance()[(i, j)]).powi(2);
            n += 1;
        }
    }
    (ss / n as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct RmseRow {
    pub target: String,
    pub d: usize,
    pub burnin: usize,
    pub replicate: usize,
    pub rmse: f64,
}

pub fn run_burnin_study(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    let variants = cfg.variants()?;
    let targets: Vec<(usize, Mvn)> =
        cfg.dims.iter().map(|&d| Ok((d, study_target(cfg.seed, d)?))).collect::<Result<_>>()?;
    let name = |d: usize| if d == 2 { "bivariate-normal".to_string() } else { format!("iw-gaussian-{d}") };

    let mut burn_jobs = Vec::new();
    for (ti, _) in targets.iter().enumerate() {
        for &b in &cfg.burnin_lengths {
            for rep in 0..cfg.replicates {
                burn_jobs.push((ti, b, rep));
            }
        }
    }
    let burn = run_parallel(cfg.threads, &burn_jobs, |&(ti, b, rep)| {
        let (d, target) = &targets[ti];
        let mut rng = stream_rng(cfg.seed, job_stream(&[&"burnin", &name(*d), &b, &rep]));
        burnin_moments(target, &vec![0.0; *d], b, b, cfg.burnin_epsilon, true, &mut rng)
    })?;
    let rmse: Vec<RmseRow> = burn_jobs
        .iter()
        .zip(&burn)
        .map(|(&(ti, b, rep), (m, _))| RmseRow {
            target: name(targets[ti].0),
            d: targets[ti].0,
            burnin: b,
            replicate: rep,
            rmse: moment_rmse(m, &targets[ti].1),
        })
        .collect();
    write_csv(&cfg.out.join("burnin_rmse.csv"), &rmse)?;

    let jobs: Vec<(usize, usize)> =
        (0..burn_jobs.len()).flat_map(|bi| (0..variants.len()).map(move |vi| (bi, vi))).collect();
    run_parallel(cfg.threads, &jobs, |&(bi, vi)| {
        let (ti, b, rep) = burn_jobs[bi];
        let (d, target) = &targets[ti];
        let (moments, start) = &burn[bi];
        let v = &variants[vi];
        let label = format!("{}@B={b}", name(*d));
        let stream = job_stream(&[&"burnin-study", &label, &v.label, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        let run = run_variant(v, target, moments, start, cfg.iterations, cfg.tune_settings(), &mut rng)?;
        let key = row_key(
            cfg,
            &label,
            &v.label,
            v.kind.name(),
            run.epsilon,
            v.epsilon().is_none(),
            v.c,
            *d,
            stream,
            rep,
            b,
        );
        Ok(Row::new(key, &run.report, cfg.timing))
    })
}
