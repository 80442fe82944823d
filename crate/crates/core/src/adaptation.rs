//! Moment estimation during burn-in and step-size tuning.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, KernelKind, Sampler};
use crate::linalg::{cholesky_lower, Matrix};
use crate::targets::TargetDensity;

/// Estimated location `μ*` and covariance `Σ*` of a target, with `Σ*`'s Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mu_star: Vec<f64>,
    pub sigma_star: Matrix,
    pub chol_lower: Matrix,
    /// Number of draws behind the estimate; 0 for exactly known moments.
    pub sample_count: usize,
}

impl MomentEstimate {
    pub fn from_known(mu_star: Vec<f64>, sigma_star: Matrix) -> Result<Self> {
        if sigma_star.rows() != mu_star.len() || sigma_star.cols() != mu_star.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {} but covariance is {}x{}",
                mu_star.len(),
                sigma_star.rows(),
                sigma_star.cols()
            )));
        }
        let sigma_star = sigma_star.symmetrized();
        let chol_lower = cholesky_lower(&sigma_star)?;
        Ok(Self { mu_star, sigma_star, chol_lower, sample_count: 0 })
    }

    /// Identity covariance centred at `mu`.
    pub fn isotropic(mu: Vec<f64>) -> Self {
        let d = mu.len();
        Self {
            mu_star: mu,
            sigma_star: Matrix::identity(d),
            chol_lower: Matrix::identity(d),
            sample_count: 0,
        }
    }

    /// Sample mean and unbiased covariance of row-major `samples` (`n × dim`).
    ///
    /// The covariance is symmetrized and its diagonal inflated by
    /// `1e-10 · trace / d` before factoring. At least `2·dim` rows are required.
    pub fn from_samples(samples: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || !samples.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of length {dim}",
                samples.len()
            )));
        }
        let n = samples.len() / dim;
        if n < 2 * dim || n < 2 {
            return Err(Error::InvalidConfig(format!(
                "moment estimation needs at least {} samples, got {n}",
                (2 * dim).max(2)
            )));
        }
        let mut mu = vec![0.0; dim];
        for row in samples.chunks_exact(dim) {
            mu.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = Matrix::zeros(dim, dim);
        let mut centred = vec![0.0; dim];
        for row in samples.chunks_exact(dim) {
            centred.iter_mut().zip(row.iter().zip(&mu)).for_each(|(c, (v, m))| *c = v - m);
            for i in 0..dim {
                let ci = centred[i];
                if ci == 0.0 {
                    continue;
                }
                let dst = &mut cov.row_mut(i)[..=i];
                for (d, cj) in dst.iter_mut().zip(&centred[..=i]) {
                    *d += ci * cj;
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..dim {
            for j in 0..=i {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let sigma = cov.regularized();
        let chol = cholesky_lower(&sigma).map_err(Error::SingularCovariance)?;
        Ok(Self { mu_star: mu, sigma_star: sigma, chol_lower: chol, sample_count: n })
    }

    pub fn dim(&self) -> usize {
        self.mu_star.len()
    }

    /// `log |det L| = Σ log Lᵢᵢ`.
    pub fn log_det_chol(&self) -> f64 {
        self.chol_lower.diagonal().iter().map(|v| v.ln()).sum()
    }

    pub fn marginal_sd(&self) -> Vec<f64> {
        self.sigma_star.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

/// Optimal random-walk scale for a `d`-dimensional Gaussian, `2.38/√d`.
pub fn default_rw_epsilon(d: usize) -> f64 {
    2.38 / (d.max(1) as f64).sqrt()
}

/// Burn-in length and update interval recommended for a dimension `d`.
pub fn recommended_burnin(d: usize) -> (usize, usize) {
    match d {
        0..=2 => (500, 500),
        3..=10 => (10_000, 10_000),
        _ => (300_000, 50_000),
    }
}

/// Default reflection coefficient and scale for mirror-type kernels.
pub const DEFAULT_MIRROR_C: f64 = 1.0;
pub const DEFAULT_MIRROR_EPSILON: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct BurninConfig {
    pub iterations: usize,
    /// Segment length; moments are re-estimated and the random walk
    /// re-preconditioned after every segment.
    pub update_every: usize,
    pub initial_epsilon: f64,
    /// Adapt the random-walk scale towards `target_accept` within each segment.
    pub adapt_scale: bool,
    pub target_accept: f64,
    /// Preconditioner for the first segment; identity when absent.
    pub initial_moments: Option<MomentEstimate>,
}

impl BurninConfig {
    /// Single-segment burn-in at a fixed scale with no adaptation.
    pub fn fixed(iterations: usize, epsilon: f64) -> Self {
        Self {
            iterations,
            update_every: iterations,
            initial_epsilon: epsilon,
            adapt_scale: false,
            target_accept: 0.234,
            initial_moments: None,
        }
    }

    /// Segmented burn-in with scale adaptation, following the recommended
    /// lengths for dimension `d`.
    pub fn adaptive(d: usize) -> Self {
        let (iterations, update_every) = recommended_burnin(d);
        Self {
            iterations,
            update_every,
            initial_epsilon: default_rw_epsilon(d),
            adapt_scale: true,
            target_accept: 0.234,
            initial_moments: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BurninResult {
    /// Moments from the last segment.
    pub moments: MomentEstimate,
    pub final_position: Vec<f64>,
    pub final_epsilon: f64,
    pub segments: usize,
}

/// Random-walk burn-in that estimates `μ*` and `Σ*`.
///
/// The run is split into segments of `update_every` iterations. After each
/// segment the moments of that segment alone are computed and the random walk is
/// re-preconditioned with them. The returned estimate comes from the last segment.
pub fn run_burnin<T, R>(target: &T, start: &[f64], config: &BurninConfig, rng: &mut R) -> Result<BurninResult>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let d = target.dim();
    if config.iterations < 100 {
        return Err(Error::InvalidConfig(format!(
            "burn-in needs at least 100 iterations, got {}",
            config.iterations
        )));
    }
    if config.update_every == 0 || config.update_every > config.iterations {
        return Err(Error::InvalidConfig("update_every must be in 1..=iterations".into()));
    }
    if config.update_every < 2 * d {
        return Err(Error::InvalidConfig(format!(
            "burn-in segments of {} iterations are too short for dimension {d}",
            config.update_every
        )));
    }
    let segments = config.iterations.div_ceil(config.update_every);
    let mut moments =
        config.initial_moments.clone().unwrap_or_else(|| MomentEstimate::isotropic(start.to_vec()));
    let mut position = start.to_vec();
    let mut epsilon = config.initial_epsilon;
    let mut last: Option<MomentEstimate> = None;
    let mut buffer = Vec::with_capacity(config.update_every * d);

    for seg in 0..segments {
        let len = config.update_every.min(config.iterations - seg * config.update_every);
        let kernel = KernelConfig::new(KernelKind::RandomWalk, epsilon).with_preconditioner(moments.clone());
        let mut sampler = Sampler::new(&kernel, target)?;
        let mut state = sampler.initial_state(position.clone())?;
        buffer.clear();
        let mut log_eps = epsilon.ln();
        for t in 0..len {
            let out = sampler.step(&mut state, rng)?;
            if config.adapt_scale {
                log_eps += ((t + 1) as f64).powf(-0.6) * (out.alpha - config.target_accept);
                log_eps = log_eps.clamp(-20.0, 5.0);
                sampler.set_epsilon(log_eps.exp())?;
            }
            buffer.extend_from_slice(&state.position);
        }
        position = state.position;
        if len >= 2 * d {
            match MomentEstimate::from_samples(&buffer, d) {
                Ok(m) => {
                    moments = m.clone();
                    last = Some(m);
                }
                Err(e) if seg + 1 == segments => return Err(e),
                Err(_) => last = None,
            }
        }
        epsilon = if config.adapt_scale { default_rw_epsilon(d) } else { config.initial_epsilon };
        if seg + 1 == segments && config.adapt_scale {
            epsilon = sampler.epsilon();
        }
    }
    let moments = last
        .ok_or_else(|| Error::InvalidConfig("final burn-in segment too short to estimate moments".into()))?;
    Ok(BurninResult { moments, final_position: position, final_epsilon: epsilon, segments })
}

#[derive(Debug, Clone, Copy)]
pub struct TuneSettings {
    pub adapt_iterations: usize,
    pub check_iterations: usize,
    pub tolerance: f64,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self { adapt_iterations: 15_000, check_iterations: 5_000, tolerance: 0.02 }
    }
}

/// Stochastic approximation on `log ε` towards a target mean acceptance.
///
/// `step(ε, rng)` must perform one transition at scale `ε` and return its
/// acceptance probability. After `adapt_iterations` updates
/// `log ε += t^{-0.6} (α − target)`, the scale is frozen at the average of the
/// second half of the `log ε` iterates, and the mean acceptance over
/// `check_iterations` further steps must land within `tolerance`.
pub fn tune_scale<R, F>(
    initial: f64,
    target_pjump: f64,
    settings: TuneSettings,
    rng: &mut R,
    mut step: F,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(f64, &mut R) -> Result<f64>,
{
    if !(target_pjump > 0.0 && target_pjump < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target acceptance must lie in (0, 1), got {target_pjump}"
        )));
    }
    if !(initial > 0.0) {
        return Err(Error::NonPositiveEpsilon(initial));
    }
    let mut log_eps = initial.ln();
    // Averaging the second half of the iterates removes most of the
    // step-size noise left in the final iterate.
    let average_from = settings.adapt_iterations / 2;
    let mut log_sum = 0.0;
    for t in 1..=settings.adapt_iterations {
        let alpha = step(log_eps.exp(), rng)?;
        log_eps += (t as f64).powf(-0.6) * (alpha - target_pjump);
        log_eps = log_eps.clamp(-20.0, 5.0);
        if t > average_from {
            log_sum += log_eps;
        }
    }
    let averaged = settings.adapt_iterations - average_from;
    let eps = if averaged > 0 { (log_sum / averaged as f64).exp() } else { log_eps.exp() };
    let mut sum = 0.0;
    for _ in 0..settings.check_iterations {
        sum += step(eps, rng)?;
    }
    let achieved = sum / settings.check_iterations.max(1) as f64;
    if (achieved - target_pjump).abs() > settings.tolerance {
        return Err(Error::TuningFailed { achieved, target: target_pjump });
    }
    Ok(eps)
}

/// Tunes ε of a kernel so that its mean acceptance probability matches `target_pjump`.
/// The pilot chain starts at `μ*` of the supplied moments (or the explicit start).
pub fn tune_epsilon<T, R>(
    kernel: &KernelConfig,
    target: &T,
    start: &[f64],
    target_pjump: f64,
    settings: TuneSettings,
    rng: &mut R,
) -> Result<f64>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let mut sampler = Sampler::new(kernel, target)?;
    let mut state = sampler.initial_state(start.to_vec())?;
    tune_scale(kernel.epsilon, target_pjump, settings, rng, |eps, rng| {
        sampler.set_epsilon(eps)?;
        Ok(sampler.step(&mut state, rng)?.alpha)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::targets::{make_mvn, Mvn};

    #[test]
    fn moments_from_samples_match_by_hand() {
        let s = [1.0, 2.0, 3.0, 6.0, 5.0, 10.0];
        let m = MomentEstimate::from_samples(&s, 2).unwrap_err();
        assert!(matches!(m, Error::InvalidConfig(_)));
        let s = [1.0, 2.0, 3.0, 6.0, 5.0, 10.0, 3.0, 6.0];
        let m = MomentEstimate::from_samples(&s, 2).unwrap();
        assert_eq!(m.mu_star, vec![3.0, 6.0]);
        // var x = (4+0+4+0)/3, cov = 2·var, var y = 4·var
        let vx = 8.0 / 3.0;
        assert!((m.sigma_star[(0, 0)] - vx).abs() < 1e-8);
        assert!((m.sigma_star[(0, 1)] - 2.0 * vx).abs() < 1e-12);
        let back = m.chol_lower.matmul(&m.chol_lower.transpose()).unwrap();
        assert!(back.sub(&m.sigma_star).frobenius_norm() < 1e-8 * m.sigma_star.frobenius_norm());
    }

    #[test]
    fn constant_samples_are_singular() {
        let s = vec![1.0; 20];
        assert!(matches!(MomentEstimate::from_samples(&s, 2), Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn burnin_recovers_standard_normal() {
        let target = Mvn::standard(2);
        let cfg = BurninConfig {
            iterations: 100_000,
            update_every: 100_000,
            initial_epsilon: default_rw_epsilon(2),
            adapt_scale: false,
            target_accept: 0.234,
            initial_moments: None,
        };
        let r = run_burnin(&target, &[0.0, 0.0], &cfg, &mut stream_rng(10, 0)).unwrap();
        assert_eq!(r.segments, 1);
        assert!(r.moments.mu_star.iter().all(|m| m.abs() < 0.05), "{:?}", r.moments.mu_star);
        let dev = r.moments.sigma_star.sub(&Matrix::identity(2)).max_abs();
        assert!(dev < 0.1, "{dev}");
        assert_eq!(r.moments.sample_count, 100_000);
    }

    #[test]
    fn adaptive_burnin_is_deterministic_and_uses_last_segment() {
        let sigma = Matrix::from_rows(&[[1.0, 1.8], [1.8, 4.0]]);
        let target = make_mvn(vec![1.0, 2.0], sigma).unwrap();
        let cfg = BurninConfig {
            iterations: 20_000,
            update_every: 5_000,
            initial_epsilon: 0.1,
            adapt_scale: true,
            target_accept: 0.234,
            initial_moments: None,
        };
        let a = run_burnin(&target, &[-3.0, 6.0], &cfg, &mut stream_rng(11, 0)).unwrap();
        let b = run_burnin(&target, &[-3.0, 6.0], &cfg, &mut stream_rng(11, 0)).unwrap();
        assert_eq!(a.moments, b.moments);
        assert_eq!(a.segments, 4);
        assert_eq!(a.moments.sample_count, 5_000);
        assert!((a.moments.mu_star[0] - 1.0).abs() < 0.3);
        assert!((a.moments.sigma_star[(1, 1)] - 4.0).abs() < 1.2);
    }

    #[test]
    fn burnin_rejects_bad_config() {
        let target = Mvn::standard(1);
        let mut cfg = BurninConfig::fixed(50, 1.0);
        assert!(run_burnin(&target, &[0.0], &cfg, &mut stream_rng(1, 0)).is_err());
        cfg = BurninConfig::fixed(500, 1.0);
        cfg.update_every = 0;
        assert!(run_burnin(&target, &[0.0], &cfg, &mut stream_rng(1, 0)).is_err());
    }

    #[test]
    fn tuned_rw_epsilon_near_optimal() {
        let target = Mvn::standard(1);
        let m = MomentEstimate::from_known(vec![0.0], Matrix::identity(1)).unwrap();
        let k = KernelConfig::new(KernelKind::RandomWalk, 1.0).with_preconditioner(m);
        let eps = tune_epsilon(&k, &target, &[0.0], 0.484, TuneSettings::default(), &mut stream_rng(12, 0))
            .unwrap();
        assert!((eps - 2.1).abs() < 0.1, "{eps}");
    }

    #[test]
    fn tuned_mala_epsilon_for_high_acceptance() {
        let target = Mvn::standard(1);
        let m = MomentEstimate::from_known(vec![0.0], Matrix::identity(1)).unwrap();
        let k = KernelConfig::new(KernelKind::Mala, 1.0).with_preconditioner(m);
        let eps =
            tune_epsilon(&k, &target, &[0.0], 0.99, TuneSettings::default(), &mut stream_rng(13, 0)).unwrap();
        assert!((eps - 0.5).abs() < 0.1, "{eps}");
    }

    #[test]
    fn tuned_epsilon_is_monotone_in_target() {
        let target = Mvn::standard(1);
        let k = KernelConfig::new(KernelKind::RandomWalk, 1.0);
        let lo =
            tune_epsilon(&k, &target, &[0.0], 0.3, TuneSettings::default(), &mut stream_rng(14, 0)).unwrap();
        let hi =
            tune_epsilon(&k, &target, &[0.0], 0.7, TuneSettings::default(), &mut stream_rng(14, 0)).unwrap();
        assert!(lo > hi, "{lo} vs {hi}");
    }

    #[test]
    fn impossible_tuning_reports_failure() {
        let res = tune_scale(1.0, 0.9, TuneSettings::default(), &mut stream_rng(15, 0), |_, _| Ok(0.1));
        assert!(matches!(res, Err(Error::TuningFailed { .. })));
    }

    #[test]
    fn true_sigma_gives_exact_proposal_covariance() {
        let sigma = Matrix::from_rows(&[[1.0, 1.8], [1.8, 4.0]]);
        let target = make_mvn(vec![0.0, 0.0], sigma.clone()).unwrap();
        let m = MomentEstimate::from_known(vec![0.0, 0.0], sigma.clone()).unwrap();
        let eps = 0.7;
        let kernel = KernelConfig::new(KernelKind::RandomWalk, eps).with_preconditioner(m);
        let mut sampler = Sampler::new(&kernel, &target).unwrap();
        let state = sampler.initial_state(vec![0.0, 0.0]).unwrap();
        let mut rng = stream_rng(16, 0);
        let n = 100_000;
        let mut draws = Vec::with_capacity(2 * n);
        for _ in 0..n {
            draws.extend(sampler.propose(&state, &mut rng).unwrap().candidate);
        }
        let est = MomentEstimate::from_samples(&draws, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = eps * eps * sigma[(i, j)];
                assert!((est.sigma_star[(i, j)] - expected).abs() < 0.05 * expected.abs(), "{i}{j}");
            }
        }
    }
}
