//! GLMM posteriors sampled jointly or blockwise in a dense or sparse whitened space.

use mirror_mcmc::adaptation::{tune_scale, MomentEstimate, TuneSettings};
use mirror_mcmc::diagnostics::{summarize, DiagnosticsReport};
use mirror_mcmc::glmm::{
    build_epilepsy_model, build_polypharmacy_model, generate_synthetic_glmm, synthetic_epilepsy_table,
    synthetic_polypharmacy_table, EpilepsyColumns, Family, GlmmPosterior, GlmmSpec, PolypharmacyColumns,
    Table,
};
use mirror_mcmc::kernels::KernelConfig;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::TargetDensity;
use mirror_mcmc::whitening::{dense_whitening, sparse_whitening, BlockSampler, WhiteningMode};
use mirror_mcmc::Error;
use serde::Serialize;

use super::{job_stream, row_key};
use crate::chain::{burnin_moments, initial_epsilon, run_parallel, run_variant};
use crate::config::{ExperimentConfig, GlmmModel};
use crate::error::{ExperimentError, Result};
use crate::output::{write_csv, Row};
use crate::variant::{tuning_target, Variant};

/// Fixed effects and `vech(W*)` that generate the synthetic Poisson model.
pub const SYNTHETIC_BETA: [f64; 3] = [0.5, 0.3, -0.4];
pub const SYNTHETIC_ZETA: [f64; 1] = [-0.693_147_180_559_945_3];

/// Posterior mean, standard deviation and Monte Carlo standard error of one parameter.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub kernel: String,
    pub replicate: usize,
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub mcse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
}

/// Likelihood and gradient evaluations per observation and iteration.
#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub kernel: String,
    pub replicate: usize,
    pub likelihood_evals_per_obs: f64,
    pub gradient_evals_per_obs: f64,
}

#[derive(Debug, Clone)]
pub struct GlmmResult {
    pub rows: Vec<Row>,
    pub posterior: Vec<PosteriorSummary>,
    pub costs: Vec<CostRow>,
    pub parameter_names: Vec<String>,
    /// Generating parameters of a synthetic model.
    pub truth: Option<Vec<f64>>,
}

/// The configured model: from a data file, or from a simulated table of the
/// same shape when no file is given.
pub fn glmm_spec(cfg: &ExperimentConfig) -> Result<(GlmmSpec, Option<Vec<f64>>, String)> {
    let table = |default: fn(usize, usize, u64) -> Table, n: usize, k: usize| -> Result<Table> {
        match &cfg.data {
            Some(p) => Ok(Table::from_path(p)?),
            None => Ok(default(n, k, cfg.seed)),
        }
    };
    // A model that cannot be built from a readable table means the data are unusable.
    let data_err = |e: Error| match e {
        Error::InvalidConfig(_) => ExperimentError::from(e),
        other => ExperimentError::Data(other.to_string()),
    };
    let pick = |v: usize, default: usize| if v == 0 { default } else { v };
    let source = if cfg.data.is_some() { "data" } else { "simulated" };
    match cfg.model {
        GlmmModel::Epilepsy => {
            let t = table(synthetic_epilepsy_table, pick(cfg.subjects, 59), pick(cfg.per_subject, 4))?;
            let spec =
                build_epilepsy_model(&t, &EpilepsyColumns::default(), cfg.prior_sd).map_err(data_err)?;
            Ok((spec, None, format!("glmm-epilepsy-{source}")))
        }
        GlmmModel::Polypharmacy => {
            let t = table(synthetic_polypharmacy_table, pick(cfg.subjects, 500), pick(cfg.per_subject, 7))?;
            let spec = build_polypharmacy_model(&t, &PolypharmacyColumns::default(), cfg.prior_sd)
                .map_err(data_err)?;
            Ok((spec, None, format!("glmm-polypharmacy-{source}")))
        }
        GlmmModel::Synthetic => {
            if cfg.data.is_some() {
                return Err(ExperimentError::Config("the synthetic GLMM does not read a data file".into()));
            }
            let (mut spec, truth) = generate_synthetic_glmm(
                Family::PoissonLog,
                pick(cfg.subjects, 20),
                pick(cfg.per_subject, 4),
                &SYNTHETIC_BETA,
                &SYNTHETIC_ZETA,
                cfg.seed,
            )?;
            spec.prior_sd = cfg.prior_sd;
            Ok((spec, Some(truth.theta()), "glmm-synthetic-poisson".into()))
        }
    }
}

struct Chain {
    epsilon: f64,
    samples: Vec<f64>,
    report: DiagnosticsReport,
}

/// Blockwise chain in the whitened space of `mode`, with a common scale for
/// every block kernel (tuned on the mean acceptance per sweep if requested).
#[allow(clippy::too_many_arguments)]
fn run_blocks(
    v: &Variant,
    mode: WhiteningMode,
    target: &GlmmPosterior,
    moments: &MomentEstimate,
    start: &[f64],
    cfg: &ExperimentConfig,
    rng: &mut mirror_mcmc::rng::ChainRng,
) -> Result<Chain> {
    let partition = target.spec().partition();
    let map = match mode {
        WhiteningMode::Dense => dense_whitening(moments, &partition)?,
        WhiteningMode::Sparse => sparse_whitening(moments, &partition)?,
    };
    let psi = map.forward(start);
    let block_dim = partition.size(0);
    let eps0 = v.epsilon().unwrap_or_else(|| initial_epsilon(v.kind, block_dim));
    let kernel = KernelConfig::new(v.kind, eps0).with_c(v.c).with_leapfrog_steps(v.leapfrog_steps);
    let kernels = vec![kernel; partition.num_blocks()];
    let mut sampler = BlockSampler::new(target, map, kernels, cfg.shared_componentwise, psi)?;
    let epsilon = match tuning_target(v, block_dim) {
        None => eps0,
        Some(p) => {
            let mut tune = |settings: TuneSettings, rng: &mut mirror_mcmc::rng::ChainRng| {
                tune_scale(eps0, p, settings, rng, |eps, rng| {
                    sampler.set_epsilon(eps)?;
                    Ok(sampler.sweep(rng)?.mean_alpha())
                })
            };
            let settings = cfg.tune_settings();
            let eps = match tune(settings, rng) {
                Err(Error::TuningFailed { .. }) => {
                    tune(TuneSettings { adapt_iterations: 2 * settings.adapt_iterations, ..settings }, rng)?
                }
                other => other?,
            };
            sampler.set_epsilon(eps)?;
            eps
        }
    };
    sampler.reset_statistics();
    let out = sampler.run(cfg.iterations, 1, rng)?;
    let rate = out.update_accept_rate.iter().sum::<f64>() / out.update_accept_rate.len() as f64;
    let accepted = (rate * out.iterations() as f64).round() as u64;
    let report = summarize(&out.samples, out.dim, &out.sweep_alpha, accepted, out.seconds)?;
    Ok(Chain { epsilon, samples: out.samples, report })
}

fn posterior_summaries(
    kernel: &str,
    rep: usize,
    names: &[String],
    samples: &[f64],
    report: &DiagnosticsReport,
    truth: Option<&[f64]>,
) -> Vec<PosteriorSummary> {
    let d = names.len();
    let n = (samples.len() / d) as f64;
    (0..d)
        .map(|j| {
            let col = samples.iter().skip(j).step_by(d);
            let mean = col.clone().sum::<f64>() / n;
            let sd = (col.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let ess = report.ess[j];
            PosteriorSummary {
                kernel: kernel.into(),
                replicate: rep,
                parameter: names[j].clone(),
                mean,
                sd,
                mcse: if ess > 0.0 { sd / ess.sqrt() } else { f64::INFINITY },
                truth: truth.map(|t| t[j]),
            }
        })
        .collect()
}

/// Runs every variant on the configured GLMM after an adaptive random-walk
/// burn-in; writes `posterior_means.csv` and `costs.csv` next to the rows.
pub fn run_glmm(cfg: &ExperimentConfig) -> Result<GlmmResult> {
    let variants = cfg.variants()?;
    let (spec, truth, label) = glmm_spec(cfg)?;
    let names = spec.parameter_names();
    let base = GlmmPosterior::new(spec);
    let d = base.dim();
    let obs = base.spec().total_observations() as f64;

    let reps: Vec<usize> = (0..cfg.replicates).collect();
    let burn = run_parallel(cfg.threads, &reps, |&rep| {
        let stream = job_stream(&[&"burnin", &label, &cfg.burnin, &cfg.burnin_segment, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        let target = base.clone();
        burnin_moments(
            &target,
            &vec![0.0; d],
            cfg.burnin,
            cfg.burnin_segment_len(),
            cfg.burnin_epsilon,
            true,
            &mut rng,
        )
    })?;

    let jobs: Vec<(usize, usize)> =
        (0..variants.len()).flat_map(|v| reps.iter().map(move |&r| (v, r))).collect();
    let results = run_parallel(cfg.threads, &jobs, |&(vi, rep)| {
        let v = &variants[vi];
        let (moments, start) = &burn[rep];
        let stream = job_stream(&[&"glmm", &label, &v.label, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        let target = base.clone();
        let chain = match v.blocks {
            None => {
                let run =
                    run_variant(v, &target, moments, start, cfg.iterations, cfg.tune_settings(), &mut rng)?;
                Chain { epsilon: run.epsilon, samples: run.output.samples, report: run.report }
            }
            Some(mode) => run_blocks(v, mode, &target, moments, start, cfg, &mut rng)?,
        };
        let key = row_key(
            cfg,
            &label,
            &v.label,
            v.kind.name(),
            chain.epsilon,
            v.epsilon().is_none(),
            v.c,
            d,
            stream,
            rep,
            cfg.burnin,
        );
        let row = Row::new(key, &chain.report, cfg.timing);
        let post =
            posterior_summaries(&v.label, rep, &names, &chain.samples, &chain.report, truth.as_deref());
        let per = obs
            * (cfg.iterations + if v.epsilon().is_none() { cfg.tune_adapt + cfg.tune_check } else { 0 })
                as f64;
        let cost = CostRow {
            kernel: v.label.clone(),
            replicate: rep,
            likelihood_evals_per_obs: target.likelihood_evaluations() as f64 / per,
            gradient_evals_per_obs: target.gradient_evaluations() as f64 / per,
        };
        Ok((row, post, cost))
    })?;

    let mut rows = Vec::new();
    let mut posterior = Vec::new();
    let mut costs = Vec::new();
    for (r, p, c) in results {
        rows.push(r);
        posterior.extend(p);
        costs.push(c);
    }
    write_csv(&cfg.out.join("posterior_means.csv"), &posterior)?;
    write_csv(&cfg.out.join("costs.csv"), &costs)?;
    Ok(GlmmResult { rows, posterior, costs, parameter_names: names, truth })
}
