//! Mirror-type Metropolis-Hastings sampling.
//!
//! The crate provides random-walk, Mirror, MALA and MirrorMALA proposal kernels,
//! a leapfrog HMC baseline and its mirrored variant, spectral efficiency
//! diagnostics, burn-in moment estimation, and dense or sparse whitening with
//! blockwise updates for generalized linear mixed models.
//!
//! ```
//! use mirror_mcmc::adaptation::MomentEstimate;
//! use mirror_mcmc::kernels::{run_chain, KernelConfig, KernelKind};
//! use mirror_mcmc::rng::stream_rng;
//! use mirror_mcmc::targets::Mvn;
//!
//! let target = Mvn::standard(2);
//! let moments = MomentEstimate::isotropic(vec![0.0, 0.0]);
//! let kernel = KernelConfig::new(KernelKind::MirrorMala, 0.5).with_preconditioner(moments);
//! let out = run_chain(&kernel, &target, &[0.0, 0.0], 1000, &mut stream_rng(1, 0)).unwrap();
//! assert_eq!(out.iterations(), 1000);
//! ```

// Negated comparisons deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod diagnostics;
pub mod error;
pub mod glmm;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod targets;
pub mod whitening;

pub use error::{Error, Result};
