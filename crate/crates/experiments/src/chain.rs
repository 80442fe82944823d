//! Building, tuning and running one kernel variant on a target.

use mirror_mcmc::adaptation::{run_burnin, tune_epsilon, BurninConfig, MomentEstimate, TuneSettings};
use mirror_mcmc::diagnostics::{summarize, DiagnosticsReport};
use mirror_mcmc::kernels::{run_chain, ChainOutput, KernelConfig, KernelKind};
use mirror_mcmc::targets::TargetDensity;
use mirror_mcmc::Error;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{ExperimentError, Result};
use crate::variant::{tuning_target, Variant};

/// Starting scale for tuning in dimension `d`.
pub fn initial_epsilon(kind: KernelKind, d: usize) -> f64 {
    let d = d.max(1) as f64;
    match kind {
        KernelKind::RandomWalk | KernelKind::Mirror => 2.38 / d.sqrt(),
        KernelKind::Mala | KernelKind::MirrorMala => 1.65 * d.powf(-1.0 / 6.0),
        KernelKind::Hmc | KernelKind::MirrorHmc => 0.5,
    }
}

/// Kernel for a variant at scale `epsilon`. Preconditioned variants use `Σ*`;
/// plain mirror-type variants still reflect through `μ*`.
pub fn build_kernel(v: &Variant, epsilon: f64, moments: &MomentEstimate) -> KernelConfig {
    let k = KernelConfig::new(v.kind, epsilon).with_c(v.c).with_leapfrog_steps(v.leapfrog_steps);
    if v.preconditioned {
        k.with_preconditioner(moments.clone())
    } else if v.kind.is_mirror() {
        k.with_centre(moments.mu_star.clone())
    } else {
        k
    }
}

/// The variant's fixed scale, or a scale tuned on a pilot chain from `start`.
/// A failed tuning run is retried once with twice the adaptation length.
pub fn resolve_epsilon<T, R>(
    v: &Variant,
    target: &T,
    moments: &MomentEstimate,
    start: &[f64],
    tune: TuneSettings,
    rng: &mut R,
) -> Result<f64>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let d = target.dim();
    let Some(p) = tuning_target(v, d) else {
        return Ok(v.epsilon().expect("fixed scale"));
    };
    let kernel = build_kernel(v, initial_epsilon(v.kind, d), moments);
    match tune_epsilon(&kernel, target, start, p, tune, rng) {
        Err(Error::TuningFailed { .. }) => {
            let longer = TuneSettings { adapt_iterations: 2 * tune.adapt_iterations, ..tune };
            Ok(tune_epsilon(&kernel, target, start, p, longer, rng)?)
        }
        other => Ok(other?),
    }
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub epsilon: f64,
    pub output: ChainOutput,
    pub report: DiagnosticsReport,
}

/// Tunes if needed, runs `iterations` transitions from `start` and summarizes.
pub fn run_variant<T, R>(
    v: &Variant,
    target: &T,
    moments: &MomentEstimate,
    start: &[f64],
    iterations: usize,
    tune: TuneSettings,
    rng: &mut R,
) -> Result<VariantRun>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let epsilon = resolve_epsilon(v, target, moments, start, tune, rng)?;
    let kernel = build_kernel(v, epsilon, moments);
    let output = run_chain(&kernel, target, start, iterations, rng)?;
    let report = summarize(&output.samples, output.dim, &output.alphas, output.accepted, output.seconds)?;
    Ok(VariantRun { epsilon, output, report })
}

/// Random-walk burn-in of `length` iterations in segments of `segment`,
/// adapting the scale when `adapt` is set.
pub fn burnin_moments<T, R>(
    target: &T,
    start: &[f64],
    length: usize,
    segment: usize,
    epsilon: Option<f64>,
    adapt: bool,
    rng: &mut R,
) -> Result<(MomentEstimate, Vec<f64>)>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let d = target.dim();
    let mut cfg = BurninConfig::adaptive(d);
    cfg.iterations = length;
    cfg.update_every = if segment == 0 { length } else { segment.min(length) };
    cfg.adapt_scale = adapt;
    if let Some(e) = epsilon {
        cfg.initial_epsilon = e;
    }
    let res = run_burnin(target, start, &cfg, rng)?;
    Ok((res.moments, res.final_position))
}

/// Runs `f` over `jobs` on a pool of `threads` workers (0 = all cores) and
/// returns the results in job order.
pub fn run_parallel<J, O, F>(threads: usize, jobs: &[J], f: F) -> Result<Vec<O>>
where
    J: Sync,
    O: Send,
    F: Fn(&J) -> Result<O> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mirror_mcmc::rng::stream_rng;
    use mirror_mcmc::targets::Mvn;

    #[test]
    fn tuned_random_walk_hits_its_target() {
        let target = Mvn::standard(5);
        let m = MomentEstimate::isotropic(vec![0.0; 5]);
        let v: Variant = "rw@tuned".parse().unwrap();
        let run =
            run_variant(&v, &target, &m, &[0.0; 5], 20_000, TuneSettings::default(), &mut stream_rng(4, 0))
                .unwrap();
        assert!((run.report.pjump - 0.234).abs() < 0.03, "{}", run.report.pjump);
    }

    #[test]
    fn plain_mirror_reflects_through_the_estimated_mean() {
        let m = MomentEstimate::isotropic(vec![1.0, 2.0]);
        let k = build_kernel(&"mirror@0.5;plain".parse().unwrap(), 0.5, &m);
        assert!(k.preconditioner.is_none());
        assert_eq!(k.centre(), Some(&[1.0, 2.0][..]));
        let k = build_kernel(&"mala@0.5;plain".parse().unwrap(), 0.5, &m);
        assert!(k.preconditioner.is_none() && k.centre().is_none());
    }

    #[test]
    fn parallel_results_keep_job_order() {
        let jobs: Vec<u64> = (0..50).collect();
        let out = run_parallel(3, &jobs, |j| Ok(j * 2)).unwrap();
        assert_eq!(out, jobs.iter().map(|j| j * 2).collect::<Vec<_>>());
    }
}
