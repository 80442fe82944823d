//! Every kernel leaves a correlated bivariate Gaussian invariant: long-run
//! means and second moments agree with the exact values within 4 Monte Carlo
//! standard errors.

use mirror_mcmc::adaptation::MomentEstimate;
use mirror_mcmc::diagnostics::effective_sample_size;
use mirror_mcmc::kernels::{run_chain, KernelConfig, KernelKind};
use mirror_mcmc::linalg::Matrix;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::make_mvn;

fn within_mcse(series: &[f64], truth: f64, label: &str) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ess = effective_sample_size(series).unwrap().ess;
    let mcse = (var / ess).sqrt();
    assert!((mean - truth).abs() < 4.0 * mcse, "{label}: mean {mean} vs {truth}, mcse {mcse}, ess {ess}");
}

fn check_kernel(kernel: KernelConfig, iterations: usize, seed: u64) {
    let mu = vec![1.0, -2.0];
    let sigma = Matrix::from_rows(&[[1.0, 0.8], [0.8, 2.0]]);
    let target = make_mvn(mu.clone(), sigma.clone()).unwrap();
    let mut rng = stream_rng(seed, 0);
    let out = run_chain(&kernel, &target, &[0.0, 0.0], iterations, &mut rng).unwrap();
    let burn = iterations / 10;
    for j in 0..2 {
        let col: Vec<f64> = out.column(j)[burn..].to_vec();
        within_mcse(&col, mu[j], &format!("{} x{j}", kernel.kind));
        let sq: Vec<f64> = col.iter().map(|v| (v - mu[j]).powi(2)).collect();
        within_mcse(&sq, sigma[(j, j)], &format!("{} (x{j}-mu)^2", kernel.kind));
    }
    let cross: Vec<f64> =
        (burn..iterations).map(|t| (out.sample(t)[0] - mu[0]) * (out.sample(t)[1] - mu[1])).collect();
    within_mcse(&cross, sigma[(0, 1)], &format!("{} cross", kernel.kind));
}

/// Slightly wrong moments, so the mirror centre is not the true mean.
fn rough_moments() -> MomentEstimate {
    MomentEstimate::from_known(vec![1.2, -1.7], Matrix::from_rows(&[[1.2, 0.7], [0.7, 1.8]])).unwrap()
}

#[test]
fn random_walk_is_invariant() {
    check_kernel(KernelConfig::new(KernelKind::RandomWalk, 1.7), 200_000, 1);
    check_kernel(
        KernelConfig::new(KernelKind::RandomWalk, 1.7).with_preconditioner(rough_moments()),
        200_000,
        2,
    );
}

#[test]
fn mirror_is_invariant() {
    check_kernel(KernelConfig::new(KernelKind::Mirror, 0.5).with_preconditioner(rough_moments()), 200_000, 3);
    check_kernel(
        KernelConfig::new(KernelKind::Mirror, 0.8).with_preconditioner(rough_moments()).with_c(0.6),
        200_000,
        4,
    );
}

#[test]
fn mala_is_invariant() {
    check_kernel(KernelConfig::new(KernelKind::Mala, 0.9), 200_000, 5);
    check_kernel(KernelConfig::new(KernelKind::Mala, 1.2).with_preconditioner(rough_moments()), 200_000, 6);
}

#[test]
fn mirror_mala_is_invariant() {
    check_kernel(
        KernelConfig::new(KernelKind::MirrorMala, 0.5).with_preconditioner(rough_moments()),
        200_000,
        7,
    );
    check_kernel(
        KernelConfig::new(KernelKind::MirrorMala, 0.7).with_preconditioner(rough_moments()).with_c(1.3),
        200_000,
        8,
    );
}

#[test]
fn hamiltonian_kernels_are_invariant() {
    check_kernel(KernelConfig::new(KernelKind::Hmc, 0.4).with_leapfrog_steps(5), 100_000, 9);
    check_kernel(
        KernelConfig::new(KernelKind::MirrorHmc, 0.3)
            .with_leapfrog_steps(3)
            .with_preconditioner(rough_moments()),
        100_000,
        10,
    );
    check_kernel(
        KernelConfig::new(KernelKind::MirrorHmc, 0.3)
            .with_leapfrog_steps(2)
            .with_preconditioner(rough_moments())
            .with_c(0.8),
        100_000,
        11,
    );
}
