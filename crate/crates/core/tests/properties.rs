use mirror_mcmc::adaptation::MomentEstimate;
use mirror_mcmc::glmm::{unvech_wstar, vech_wstar};
use mirror_mcmc::kernels::{propose, ChainState, KernelConfig, KernelKind};
use mirror_mcmc::linalg::{BlockPartition, Matrix};
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::make_mvn;
use mirror_mcmc::whitening::{dense_whitening, sparse_whitening};
use proptest::prelude::*;

fn spd_from(entries: &[f64], d: usize) -> Matrix {
    let a = Matrix::from_row_major(d, d, entries[..d * d].to_vec()).unwrap();
    let mut s = a.matmul(&a.transpose()).unwrap();
    for i in 0..d {
        s[(i, i)] += 0.3;
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn whitening_round_trip(entries in prop::collection::vec(-1.0f64..1.0, 49),
                            theta in prop::collection::vec(-5.0f64..5.0, 7)) {
        let sigma = spd_from(&entries, 7);
        let moments = MomentEstimate::from_known(vec![0.0; 7], sigma).unwrap();
        let part = BlockPartition::random_effects(3, 1, 4).unwrap();
        for map in [dense_whitening(&moments, &part).unwrap(), sparse_whitening(&moments, &part).unwrap()] {
            let back = map.inverse(&map.forward(&theta));
            for (a, b) in back.iter().zip(&theta) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sparse_inverse_is_local(entries in prop::collection::vec(-1.0f64..1.0, 64),
                               psi in prop::collection::vec(-3.0f64..3.0, 8),
                               shift in -10.0f64..10.0) {
        let moments = MomentEstimate::from_known(vec![0.0; 8], spd_from(&entries, 8)).unwrap();
        let part = BlockPartition::random_effects(3, 2, 2).unwrap();
        let map = sparse_whitening(&moments, &part).unwrap();
        let base = map.inverse(&psi);
        let mut moved = psi.clone();
        moved[2] += shift;
        moved[3] -= shift;
        let other = map.inverse(&moved);
        for k in [0usize, 1, 4, 5, 6, 7] {
            prop_assert_eq!(base[k], other[k]);
        }
    }

    #[test]
    fn vech_round_trip(entries in prop::collection::vec(-1.0f64..1.0, 9)) {
        let g = spd_from(&entries, 3);
        let (_, back) = unvech_wstar(&vech_wstar(&g).unwrap()).unwrap();
        prop_assert!(back.sub(&g).max_abs() < 1e-9);
    }

    #[test]
    fn symmetric_kernels_have_equal_proposal_densities(seed in 0u64..1000, x in -3.0f64..3.0, y in -3.0f64..3.0,
                                                       eps in 0.1f64..3.0) {
        let target = make_mvn(vec![0.5, -0.5], Matrix::from_rows(&[[1.0, 0.3], [0.3, 2.0]])).unwrap();
        let moments = MomentEstimate::from_known(vec![0.4, -0.2], Matrix::from_rows(&[[1.5, 0.2], [0.2, 1.0]])).unwrap();
        let state = ChainState::new(&target, vec![x, y], false).unwrap();
        for kind in [KernelKind::RandomWalk, KernelKind::Mirror] {
            let kernel = KernelConfig::new(kind, eps).with_preconditioner(moments.clone());
            let mut rng = stream_rng(seed, 0);
            let p = propose(&kernel, &state, &target, &mut rng).unwrap();
            prop_assert!((p.log_q_forward - p.log_q_backward).abs() < 1e-12);
        }
    }

    #[test]
    fn mirror_proposals_centre_on_the_reflection(seed in 0u64..1000, x in -3.0f64..3.0, c in 0.1f64..2.0) {
        let target = make_mvn(vec![0.0], Matrix::identity(1)).unwrap();
        let kernel = KernelConfig::new(KernelKind::Mirror, 1e-9).with_centre(vec![1.0]).with_c(c);
        let state = ChainState::new(&target, vec![x], false).unwrap();
        let mut rng = stream_rng(seed, 0);
        let p = propose(&kernel, &state, &target, &mut rng).unwrap();
        prop_assert!((p.candidate[0] - (1.0 + c * (1.0 - x))).abs() < 1e-6);
    }
}
