//! Monte Carlo acceptance rates on N(0, 1) match the closed forms.

use mirror_mcmc::adaptation::MomentEstimate;
use mirror_mcmc::diagnostics::{pjump_mala_analytic, pjump_rw_analytic};
use mirror_mcmc::kernels::{run_chain, KernelConfig, KernelKind};
use mirror_mcmc::linalg::Matrix;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::make_oned_target;

fn exact() -> MomentEstimate {
    MomentEstimate::from_known(vec![0.0], Matrix::identity(1)).unwrap()
}

fn monte_carlo(kind: KernelKind, eps: f64, seed: u64) -> f64 {
    let target = make_oned_target(1).unwrap();
    let kernel = KernelConfig::new(kind, eps).with_preconditioner(exact());
    let mut rng = stream_rng(seed, 0);
    run_chain(&kernel, &target, &[0.3], 200_000, &mut rng).unwrap().pjump()
}

#[test]
fn random_walk_and_mirror_share_the_closed_form() {
    for (i, eps) in [0.4, 0.5, 1.4, 2.1].into_iter().enumerate() {
        let want = pjump_rw_analytic(eps).unwrap();
        for kind in [KernelKind::RandomWalk, KernelKind::Mirror] {
            let got = monte_carlo(kind, eps, 10 + i as u64);
            assert!((got - want).abs() < 0.005, "{kind} eps={eps}: {got} vs {want}");
        }
    }
}

#[test]
fn mala_and_mirror_mala_share_the_closed_form() {
    for (i, eps) in [0.4, 0.5, 1.4, 2.1].into_iter().enumerate() {
        let want = pjump_mala_analytic(eps).unwrap();
        for kind in [KernelKind::Mala, KernelKind::MirrorMala] {
            let got = monte_carlo(kind, eps, 20 + i as u64);
            assert!((got - want).abs() < 0.005, "{kind} eps={eps}: {got} vs {want}");
        }
    }
}
