//! Whitening transformations and blockwise Metropolis-Hastings sweeps.
//!
//! A [`WhiteningMap`] is a frozen linear change of variables. Dense mode uses
//! `φ = C⁻¹θ` with `C = chol(Σ*)`. Sparse mode uses `ψ = Rθ` where `R = Lᵀ` and
//! `L` is the Cholesky factor of the precision `Σ*⁻¹` with every entry coupling
//! two different random-effect blocks set to zero. The resulting arrow pattern
//! means `θ_i` depends only on `ψ_i` and the shared block, so a block update
//! needs only that subject's terms.

use std::cell::RefCell;
use std::ops::Range;
use std::time::Instant;

use rand::Rng;

use crate::adaptation::MomentEstimate;
use crate::error::{Error, Result};
use crate::kernels::{ChainState, KernelConfig, Sampler, StepOutcome};
use crate::linalg::{cholesky_lower, invert_spd, solve_lower_in_place, BlockPartition, Matrix};
use crate::targets::TargetDensity;

/// A target whose log-density splits over a [`BlockPartition`] as
/// `log π(θ) = Σ_i local_i(θ_i, θ_η) + shared(θ_η)`, where `θ_η` is the last block.
pub trait BlockTarget: TargetDensity {
    fn partition(&self) -> &BlockPartition;

    /// Terms of the log-density that involve local block `block`.
    fn local_log_density(&self, block: usize, theta: &[f64]) -> f64;

    /// Gradient of `local_log_density` with respect to the coordinates of `block`.
    fn local_grad(&self, block: usize, theta: &[f64], out: &mut [f64]);

    /// Terms that involve only the shared block.
    fn shared_log_density(&self, theta: &[f64]) -> f64;
}

impl<T: BlockTarget + ?Sized> BlockTarget for &T {
    fn partition(&self) -> &BlockPartition {
        (**self).partition()
    }

    fn local_log_density(&self, block: usize, theta: &[f64]) -> f64 {
        (**self).local_log_density(block, theta)
    }

    fn local_grad(&self, block: usize, theta: &[f64], out: &mut [f64]) {
        (**self).local_grad(block, theta, out)
    }

    fn shared_log_density(&self, theta: &[f64]) -> f64 {
        (**self).shared_log_density(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WhiteningMode {
    Dense,
    Sparse,
}

#[derive(Debug, Clone)]
pub struct WhiteningMap {
    mode: WhiteningMode,
    /// Dense: `C`. Sparse: `L` with `R = Lᵀ`.
    factor: Matrix,
    partition: BlockPartition,
    log_abs_det_forward: f64,
    centre: Vec<f64>,
}

/// `C = chol(Σ*)`, `φ = C⁻¹θ`.
pub fn dense_whitening(moments: &MomentEstimate, partition: &BlockPartition) -> Result<WhiteningMap> {
    check_dims(moments, partition)?;
    let factor = moments.chol_lower.clone();
    let log_abs_det_forward = -factor.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut map = WhiteningMap {
        mode: WhiteningMode::Dense,
        factor,
        partition: partition.clone(),
        log_abs_det_forward,
        centre: Vec::new(),
    };
    map.centre = map.forward(&moments.mu_star);
    Ok(map)
}

/// `Ω* = Σ*⁻¹`, `L = chol(Ω*)` with cross-subject blocks zeroed, `ψ = Lᵀθ`.
pub fn sparse_whitening(moments: &MomentEstimate, partition: &BlockPartition) -> Result<WhiteningMap> {
    check_dims(moments, partition)?;
    let omega = invert_spd(&moments.sigma_star)?;
    let l = cholesky_lower(&omega)?;
    WhiteningMap::from_sparse_factor(zero_cross_blocks(l, partition), &moments.mu_star, partition)
}

fn check_dims(moments: &MomentEstimate, partition: &BlockPartition) -> Result<()> {
    if moments.dim() != partition.dim() {
        return Err(Error::DimensionMismatch(format!(
            "moments have dimension {} but the partition covers {}",
            moments.dim(),
            partition.dim()
        )));
    }
    Ok(())
}

fn zero_cross_blocks(mut l: Matrix, partition: &BlockPartition) -> Matrix {
    let n = partition.num_local();
    for i in 0..n {
        for j in 0..i {
            for a in partition.range(i) {
                for b in partition.range(j) {
                    l[(a, b)] = 0.0;
                }
            }
        }
    }
    l
}

impl WhiteningMap {
    /// Identity map (dense mode, `μ* = centre`).
    pub fn identity(partition: &BlockPartition, centre: Vec<f64>) -> Result<Self> {
        if centre.len() != partition.dim() {
            return Err(Error::DimensionMismatch("centre does not match the partition".into()));
        }
        Ok(Self {
            mode: WhiteningMode::Dense,
            factor: Matrix::identity(partition.dim()),
            partition: partition.clone(),
            log_abs_det_forward: 0.0,
            centre,
        })
    }

    /// Sparse map from an externally supplied lower factor `L` (so `R = Lᵀ`).
    /// Entries outside the arrow pattern must be zero.
    pub fn from_sparse_factor(l: Matrix, mu_star: &[f64], partition: &BlockPartition) -> Result<Self> {
        let d = partition.dim();
        if l.rows() != d || l.cols() != d || mu_star.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "factor is {}x{}, centre has {} entries, partition covers {d}",
                l.rows(),
                l.cols(),
                mu_star.len()
            )));
        }
        if !l.is_lower_triangular() {
            return Err(Error::PatternViolation("factor is not lower triangular".into()));
        }
        if let Some(k) = (0..d).find(|&k| !(l[(k, k)] > 0.0)) {
            return Err(Error::PatternViolation(format!("nonpositive diagonal entry at {k}")));
        }
        let n = partition.num_local();
        for i in 0..n {
            for j in 0..i {
                for a in partition.range(i) {
                    for b in partition.range(j) {
                        if l[(a, b)] != 0.0 {
                            return Err(Error::PatternViolation(format!(
                                "entry ({a}, {b}) couples blocks {i} and {j}"
                            )));
                        }
                    }
                }
            }
        }
        let log_abs_det_forward = l.diagonal().iter().map(|v| v.ln()).sum();
        let mut map = Self {
            mode: WhiteningMode::Sparse,
            factor: l,
            partition: partition.clone(),
            log_abs_det_forward,
            centre: Vec::new(),
        };
        map.centre = map.forward(mu_star);
        Ok(map)
    }

    pub fn mode(&self) -> WhiteningMode {
        self.mode
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    /// `log |det ∂ψ/∂θ|`.
    pub fn log_abs_det_forward(&self) -> f64 {
        self.log_abs_det_forward
    }

    /// Image of `μ*` under the forward map.
    pub fn whitened_centre(&self) -> &[f64] {
        &self.centre
    }

    /// Lower factor: `C` in dense mode, `L = Rᵀ` in sparse mode.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// Dense matrix of the forward map (`C⁻¹` or `R`).
    pub fn forward_matrix(&self) -> Matrix {
        match self.mode {
            WhiteningMode::Dense => {
                let d = self.dim();
                let mut m = Matrix::zeros(d, d);
                let mut e = vec![0.0; d];
                for j in 0..d {
                    e.iter_mut().for_each(|v| *v = 0.0);
                    e[j] = 1.0;
                    solve_lower_in_place(&self.factor, &mut e).expect("positive diagonal");
                    for i in 0..d {
                        m[(i, j)] = e[i];
                    }
                }
                m
            }
            WhiteningMode::Sparse => self.factor.transpose(),
        }
    }

    pub fn forward(&self, theta: &[f64]) -> Vec<f64> {
        match self.mode {
            WhiteningMode::Dense => {
                let mut out = theta.to_vec();
                solve_lower_in_place(&self.factor, &mut out).expect("positive diagonal");
                out
            }
            WhiteningMode::Sparse => self.factor.transpose_mul_vec(theta),
        }
    }

    pub fn inverse_into(&self, psi: &[f64], theta: &mut [f64]) {
        match self.mode {
            WhiteningMode::Dense => self.factor.lower_mul_vec_into(psi, theta),
            WhiteningMode::Sparse => {
                let eta = self.partition.shared_range();
                theta[eta.clone()].copy_from_slice(&psi[eta.clone()]);
                self.solve_upper_block(eta, theta);
                for i in 0..self.partition.num_local() {
                    let r = self.partition.range(i);
                    self.inverse_local(i, &psi[r], theta);
                }
            }
        }
    }

    pub fn inverse(&self, psi: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; psi.len()];
        self.inverse_into(psi, &mut theta);
        theta
    }

    /// Sparse mode: sets `θ_i = R_ii⁻¹(ψ_i − R_iη θ_η)` in place, reading the
    /// shared block of `theta`.
    pub fn inverse_local(&self, block: usize, psi_block: &[f64], theta: &mut [f64]) {
        debug_assert_eq!(self.mode, WhiteningMode::Sparse);
        let r = self.partition.range(block);
        let eta = self.partition.shared_range();
        for (a, &p) in r.clone().zip(psi_block) {
            let mut acc = p;
            for k in eta.clone() {
                acc -= self.factor[(k, a)] * theta[k];
            }
            theta[a] = acc;
        }
        self.solve_upper_block(r, theta);
    }

    /// Solves `(L_bb)ᵀ x = theta[b]` in place for the diagonal block `b`.
    fn solve_upper_block(&self, range: Range<usize>, theta: &mut [f64]) {
        for a in range.clone().rev() {
            let mut acc = theta[a];
            for b in a + 1..range.end {
                acc -= self.factor[(b, a)] * theta[b];
            }
            theta[a] = acc / self.factor[(a, a)];
        }
    }

    /// Gradient in whitened coordinates from the gradient in `θ`:
    /// `Cᵀ∇θ` (dense) or `R⁻ᵀ∇θ = L⁻¹∇θ` (sparse).
    pub fn pull_back_gradient(&self, grad_theta: &[f64], out: &mut [f64]) {
        match self.mode {
            WhiteningMode::Dense => {
                let d = grad_theta.len();
                for (j, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in j..d {
                        acc += self.factor[(i, j)] * grad_theta[i];
                    }
                    *o = acc;
                }
            }
            WhiteningMode::Sparse => {
                out.copy_from_slice(grad_theta);
                solve_lower_in_place(&self.factor, out).expect("positive diagonal");
            }
        }
    }

    /// Sparse mode: `∇ψ_i = L_ii⁻¹ ∇θ_i` for a gradient of a local term.
    pub fn pull_back_local_gradient(&self, block: usize, grad_block: &[f64], out: &mut [f64]) {
        let r = self.partition.range(block);
        let start = r.start;
        for (k, a) in r.enumerate() {
            let mut acc = grad_block[k];
            for b in start..a {
                acc -= self.factor[(a, b)] * out[b - start];
            }
            out[k] = acc / self.factor[(a, a)];
        }
    }
}

/// A target expressed in whitened coordinates:
/// `log π_ψ(ψ) = log π(θ(ψ)) − log|det ∂ψ/∂θ|`.
pub struct WhitenedTarget<'a, T: ?Sized> {
    target: &'a T,
    map: &'a WhiteningMap,
}

impl<'a, T: TargetDensity + ?Sized> WhitenedTarget<'a, T> {
    pub fn new(target: &'a T, map: &'a WhiteningMap) -> Result<Self> {
        if target.dim() != map.dim() {
            return Err(Error::DimensionMismatch(format!(
                "target has dimension {} but the map covers {}",
                target.dim(),
                map.dim()
            )));
        }
        Ok(Self { target, map })
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for WhitenedTarget<'_, T> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn log_density(&self, psi: &[f64]) -> f64 {
        self.target.log_density(&self.map.inverse(psi)) - self.map.log_abs_det_forward
    }

    fn grad_log_density(&self, psi: &[f64], grad: &mut [f64]) {
        let mut g = vec![0.0; psi.len()];
        self.target.grad_log_density(&self.map.inverse(psi), &mut g);
        self.map.pull_back_gradient(&g, grad);
    }

    fn log_density_and_grad(&self, psi: &[f64], grad: &mut [f64]) -> f64 {
        let mut g = vec![0.0; psi.len()];
        let ld = self.target.log_density_and_grad(&self.map.inverse(psi), &mut g);
        self.map.pull_back_gradient(&g, grad);
        ld - self.map.log_abs_det_forward
    }

    fn back_transform(&self, psi: &[f64], out: &mut [f64]) {
        self.map.inverse_into(psi, out);
    }

    fn has_transform(&self) -> bool {
        true
    }
}

/// Candidate evaluations of the shared block in sparse mode, so the accepted
/// candidate's local terms can be adopted without re-evaluation.
type SharedEval = (Vec<f64>, Vec<f64>, f64);

enum ViewKind {
    /// Sparse local block: only that subject's terms.
    Local(usize),
    /// Full posterior through the whole inverse map.
    Full,
}

/// One block (or one shared-block component) of the current state, seen as a
/// standalone target for the kernel machinery.
struct BlockView<'s, T: ?Sized> {
    target: &'s T,
    map: &'s WhiteningMap,
    coords: Range<usize>,
    kind: ViewKind,
    work_psi: &'s RefCell<Vec<f64>>,
    work_theta: &'s RefCell<Vec<f64>>,
    evaluated: RefCell<Vec<SharedEval>>,
}

impl<T: BlockTarget + ?Sized> BlockView<'_, T> {
    fn load(&self, x: &[f64]) {
        match self.kind {
            ViewKind::Local(i) => self.map.inverse_local(i, x, &mut self.work_theta.borrow_mut()),
            ViewKind::Full => {
                let mut psi = self.work_psi.borrow_mut();
                psi[self.coords.clone()].copy_from_slice(x);
                self.map.inverse_into(&psi, &mut self.work_theta.borrow_mut());
            }
        }
    }

    fn full_value(&self, x: &[f64]) -> f64 {
        let theta = self.work_theta.borrow();
        match self.map.mode {
            WhiteningMode::Dense => self.target.log_density(&theta) - self.map.log_abs_det_forward,
            WhiteningMode::Sparse => {
                let locals: Vec<f64> = (0..self.map.partition.num_local())
                    .map(|i| self.target.local_log_density(i, &theta))
                    .collect();
                let shared = self.target.shared_log_density(&theta);
                let total = sparse_total(&locals, shared, self.map);
                self.evaluated.borrow_mut().push((x.to_vec(), locals, shared));
                total
            }
        }
    }

    fn gradient(&self, grad: &mut [f64]) {
        let theta = self.work_theta.borrow();
        match self.kind {
            ViewKind::Local(i) => {
                let mut g = vec![0.0; grad.len()];
                self.target.local_grad(i, &theta, &mut g);
                self.map.pull_back_local_gradient(i, &g, grad);
            }
            ViewKind::Full => {
                let d = theta.len();
                let mut g = vec![0.0; d];
                let mut gpsi = vec![0.0; d];
                self.target.grad_log_density(&theta, &mut g);
                self.map.pull_back_gradient(&g, &mut gpsi);
                grad.copy_from_slice(&gpsi[self.coords.clone()]);
            }
        }
    }
}

impl<T: BlockTarget + ?Sized> TargetDensity for BlockView<'_, T> {
    fn dim(&self) -> usize {
        self.coords.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.load(x);
        match self.kind {
            ViewKind::Local(i) => self.target.local_log_density(i, &self.work_theta.borrow()),
            ViewKind::Full => self.full_value(x),
        }
    }

    fn grad_log_density(&self, x: &[f64], grad: &mut [f64]) {
        self.load(x);
        self.gradient(grad);
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.load(x);
        self.gradient(grad);
        match self.kind {
            ViewKind::Local(i) => self.target.local_log_density(i, &self.work_theta.borrow()),
            ViewKind::Full => self.full_value(x),
        }
    }
}

fn sparse_total(locals: &[f64], shared: f64, map: &WhiteningMap) -> f64 {
    locals.iter().sum::<f64>() + shared - map.log_abs_det_forward
}

/// Sweeps through the blocks of a whitened parameter in order, one MH update
/// per local block followed by the shared block (jointly or one coordinate at
/// a time).
pub struct BlockSampler<'a, T: BlockTarget + ?Sized> {
    target: &'a T,
    map: WhiteningMap,
    kernels: Vec<KernelConfig>,
    shared_componentwise: bool,
    psi: Vec<f64>,
    theta: Vec<f64>,
    work_psi: RefCell<Vec<f64>>,
    work_theta: RefCell<Vec<f64>>,
    /// Sparse mode: cached local terms and shared term at the current state.
    locals: Vec<f64>,
    shared: f64,
    /// Dense mode: cached whitened log-density at the current state.
    full: f64,
    alpha_sums: Vec<f64>,
    accept_counts: Vec<u64>,
    update_counts: Vec<u64>,
}

/// Per-update results of one sweep, in update order.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub updates: Vec<StepOutcome>,
}

impl SweepOutcome {
    pub fn mean_alpha(&self) -> f64 {
        self.updates.iter().map(|u| u.alpha).sum::<f64>() / self.updates.len() as f64
    }
}

impl<'a, T: BlockTarget + ?Sized> BlockSampler<'a, T> {
    /// `kernels` holds one kernel per block. With `shared_componentwise` the
    /// last kernel is one-dimensional and is applied to each shared coordinate
    /// in turn. Mirror kernels without an explicit centre reflect through the
    /// whitened `μ*`.
    pub fn new(
        target: &'a T,
        map: WhiteningMap,
        kernels: Vec<KernelConfig>,
        shared_componentwise: bool,
        psi: Vec<f64>,
    ) -> Result<Self> {
        let partition = map.partition().clone();
        if target.partition() != &partition {
            return Err(Error::DimensionMismatch("target and map partitions differ".into()));
        }
        if kernels.len() != partition.num_blocks() {
            return Err(Error::InvalidConfig(format!(
                "need {} block kernels, got {}",
                partition.num_blocks(),
                kernels.len()
            )));
        }
        let nb = partition.num_blocks();
        let mut resolved = Vec::with_capacity(nb);
        for (b, k) in kernels.into_iter().enumerate() {
            let range = partition.range(b);
            let dims: Vec<Range<usize>> = if b == nb - 1 && shared_componentwise {
                range.map(|j| j..j + 1).collect()
            } else {
                vec![range]
            };
            for r in &dims {
                let mut probe = k.clone();
                if probe.kind.is_mirror() && probe.centre().is_none() {
                    probe.mirror_centre = Some(map.whitened_centre()[r.clone()].to_vec());
                }
                probe.validate(r.len())?;
            }
            resolved.push(k);
        }
        let d = partition.dim();
        if psi.len() != d {
            return Err(Error::DimensionMismatch(format!("start has dimension {}, expected {d}", psi.len())));
        }
        let updates = partition.num_local() + if shared_componentwise { partition.size(nb - 1) } else { 1 };
        let mut sampler = Self {
            target,
            map,
            kernels: resolved,
            shared_componentwise,
            theta: vec![0.0; d],
            work_psi: RefCell::new(psi.clone()),
            work_theta: RefCell::new(vec![0.0; d]),
            psi,
            locals: vec![0.0; partition.num_local()],
            shared: 0.0,
            full: 0.0,
            alpha_sums: vec![0.0; updates],
            accept_counts: vec![0; updates],
            update_counts: vec![0; updates],
        };
        sampler.set_psi(sampler.psi.clone())?;
        Ok(sampler)
    }

    /// Moves to `psi` and refreshes every cached term.
    pub fn set_psi(&mut self, psi: Vec<f64>) -> Result<()> {
        if psi.len() != self.map.dim() {
            return Err(Error::DimensionMismatch("psi has the wrong dimension".into()));
        }
        self.psi = psi;
        self.map.inverse_into(&self.psi, &mut self.theta);
        self.sync_work();
        match self.map.mode {
            WhiteningMode::Dense => {
                self.full = self.target.log_density(&self.theta) - self.map.log_abs_det_forward;
            }
            WhiteningMode::Sparse => {
                for i in 0..self.locals.len() {
                    self.locals[i] = self.target.local_log_density(i, &self.theta);
                }
                self.shared = self.target.shared_log_density(&self.theta);
            }
        }
        Ok(())
    }

    fn sync_work(&self) {
        self.work_psi.borrow_mut().copy_from_slice(&self.psi);
        self.work_theta.borrow_mut().copy_from_slice(&self.theta);
    }

    pub fn map(&self) -> &WhiteningMap {
        &self.map
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Whitened log-density at the current state from the cached terms,
    /// including the Jacobian constant.
    pub fn current_log_density(&self) -> f64 {
        match self.map.mode {
            WhiteningMode::Dense => self.full,
            WhiteningMode::Sparse => sparse_total(&self.locals, self.shared, &self.map),
        }
    }

    /// Sets the scale of every block kernel.
    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        self.kernels.iter_mut().for_each(|k| k.epsilon = epsilon);
        Ok(())
    }

    /// Clears the per-update acceptance statistics.
    pub fn reset_statistics(&mut self) {
        self.alpha_sums.iter_mut().for_each(|v| *v = 0.0);
        self.accept_counts.iter_mut().for_each(|v| *v = 0);
        self.update_counts.iter_mut().for_each(|v| *v = 0);
    }

    /// Number of MH updates per sweep.
    pub fn updates_per_sweep(&self) -> usize {
        self.alpha_sums.len()
    }

    /// Mean acceptance probability of each update slot so far.
    pub fn update_pjump(&self) -> Vec<f64> {
        self.alpha_sums
            .iter()
            .zip(&self.update_counts)
            .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect()
    }

    pub fn update_accept_rate(&self) -> Vec<f64> {
        self.accept_counts
            .iter()
            .zip(&self.update_counts)
            .map(|(&a, &n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }

    fn view(&self, block: usize, coords: Range<usize>) -> BlockView<'_, T> {
        let local = self.map.mode == WhiteningMode::Sparse && block < self.map.partition.num_local();
        BlockView {
            target: self.target,
            map: &self.map,
            coords,
            kind: if local { ViewKind::Local(block) } else { ViewKind::Full },
            work_psi: &self.work_psi,
            work_theta: &self.work_theta,
            evaluated: RefCell::new(Vec::new()),
        }
    }

    fn current_value(&self, block: usize) -> f64 {
        match self.map.mode {
            WhiteningMode::Sparse if block < self.locals.len() => self.locals[block],
            _ => self.current_log_density(),
        }
    }

    /// Log target ratio that an update of `block` to `candidate` would use,
    /// without the proposal terms.
    pub fn block_log_ratio(&self, block: usize, candidate: &[f64]) -> f64 {
        let coords = self.map.partition.range(block);
        let view = self.view(block, coords);
        let value = view.log_density(candidate);
        self.sync_work();
        value - self.current_value(block)
    }

    fn kernel_for(&self, block: usize, coords: &Range<usize>) -> KernelConfig {
        let mut k = self.kernels[block].clone();
        if k.kind.is_mirror() && k.centre().is_none() {
            k.mirror_centre = Some(self.map.whitened_centre()[coords.clone()].to_vec());
        }
        k
    }

    fn update<R: Rng + ?Sized>(
        &mut self,
        block: usize,
        coords: Range<usize>,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let kernel = self.kernel_for(block, &coords);
        let current = self.current_value(block);
        let (outcome, position, log_density, evaluated) = {
            let view = self.view(block, coords.clone());
            let mut state = ChainState {
                position: self.psi[coords.clone()].to_vec(),
                log_density: current,
                gradient: None,
                accept_count: 0,
                alpha_sum: 0.0,
                iterations: 0,
            };
            if kernel.kind.uses_gradient() {
                let mut g = vec![0.0; coords.len()];
                view.grad_log_density(&state.position, &mut g);
                state.gradient = Some(g);
            }
            let mut sampler = Sampler::new(&kernel, &view)?;
            let outcome = sampler.step(&mut state, rng);
            drop(sampler);
            (outcome, state.position, state.log_density, view.evaluated.into_inner())
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                self.sync_work();
                return Err(e);
            }
        };
        if outcome.accepted {
            self.psi[coords.clone()].copy_from_slice(&position);
            match self.map.mode {
                WhiteningMode::Sparse if block < self.locals.len() => {
                    self.map.inverse_local(block, &position, &mut self.theta);
                    self.locals[block] = log_density;
                }
                WhiteningMode::Sparse => {
                    let (_, locals, shared) = evaluated
                        .into_iter()
                        .rev()
                        .find(|(p, _, _)| p == &position)
                        .expect("accepted candidate was evaluated");
                    self.locals = locals;
                    self.shared = shared;
                    self.map.inverse_into(&self.psi, &mut self.theta);
                }
                WhiteningMode::Dense => {
                    self.full = log_density;
                    self.map.inverse_into(&self.psi, &mut self.theta);
                }
            }
        }
        self.sync_work();
        Ok(outcome)
    }

    /// One pass over all blocks in order.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<SweepOutcome> {
        let partition = self.map.partition.clone();
        let nb = partition.num_blocks();
        let mut updates = Vec::with_capacity(self.updates_per_sweep());
        for b in 0..nb - 1 {
            updates.push(self.update(b, partition.range(b), rng)?);
        }
        let shared = partition.range(nb - 1);
        if self.shared_componentwise {
            for j in shared {
                updates.push(self.update(nb - 1, j..j + 1, rng)?);
            }
        } else {
            updates.push(self.update(nb - 1, shared, rng)?);
        }
        for (slot, u) in updates.iter().enumerate() {
            self.alpha_sums[slot] += u.alpha;
            self.accept_counts[slot] += u64::from(u.accepted);
            self.update_counts[slot] += 1;
        }
        Ok(SweepOutcome { updates })
    }

    /// Runs `sweeps` sweeps and records `θ` after each one, keeping every `thin`-th.
    pub fn run<R: Rng + ?Sized>(
        &mut self,
        sweeps: usize,
        thin: usize,
        rng: &mut R,
    ) -> Result<BlockChainOutput> {
        let thin = thin.max(1);
        let d = self.map.dim();
        let mut samples = Vec::with_capacity(sweeps / thin * d);
        let mut sweep_alpha = Vec::with_capacity(sweeps / thin);
        let start = Instant::now();
        for t in 0..sweeps {
            let out = self.sweep(rng)?;
            if (t + 1) % thin == 0 {
                samples.extend_from_slice(&self.theta);
                sweep_alpha.push(out.mean_alpha());
            }
        }
        Ok(BlockChainOutput {
            dim: d,
            samples,
            sweep_alpha,
            update_pjump: self.update_pjump(),
            update_accept_rate: self.update_accept_rate(),
            seconds: start.elapsed().as_secs_f64(),
            final_psi: self.psi.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BlockChainOutput {
    pub dim: usize,
    /// Recorded states in the original parameterization, row-major.
    pub samples: Vec<f64>,
    /// Mean acceptance probability over the updates of each recorded sweep.
    pub sweep_alpha: Vec<f64>,
    pub update_pjump: Vec<f64>,
    pub update_accept_rate: Vec<f64>,
    pub seconds: f64,
    pub final_psi: Vec<f64>,
}

impl BlockChainOutput {
    pub fn iterations(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.iterations() as f64;
        let mut m = vec![0.0; self.dim];
        for row in self.samples.chunks(self.dim) {
            m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Mean acceptance probability over all updates.
    pub fn pjump(&self) -> f64 {
        self.update_pjump.iter().sum::<f64>() / self.update_pjump.len() as f64
    }
}

/// One sweep from `psi`; returns the new position and the per-update outcomes.
pub fn block_mh_sweep<T, R>(
    psi: Vec<f64>,
    map: &WhiteningMap,
    kernels: &[KernelConfig],
    shared_componentwise: bool,
    target: &T,
    rng: &mut R,
) -> Result<(Vec<f64>, SweepOutcome)>
where
    T: BlockTarget + ?Sized,
    R: Rng + ?Sized,
{
    let mut sampler = BlockSampler::new(target, map.clone(), kernels.to_vec(), shared_componentwise, psi)?;
    let out = sampler.sweep(rng)?;
    Ok((sampler.psi, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::{generate_synthetic_glmm, Family, GlmmPosterior};
    use crate::kernels::{run_chain, KernelKind};
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_spd(d: usize, seed: u64) -> Matrix {
        let mut rng = stream_rng(seed, 0);
        let a =
            Matrix::from_row_major(d, d, (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut s = a.matmul(&a.transpose()).unwrap();
        for i in 0..d {
            s[(i, i)] += 0.5;
        }
        s
    }

    fn moments(sigma: Matrix) -> MomentEstimate {
        let d = sigma.rows();
        MomentEstimate::from_known((0..d).map(|i| 0.1 * i as f64).collect(), sigma).unwrap()
    }

    #[test]
    fn dense_identity_and_diagonal() {
        let part = BlockPartition::single(2).unwrap();
        let m =
            dense_whitening(&MomentEstimate::from_known(vec![0.0; 2], Matrix::identity(2)).unwrap(), &part)
                .unwrap();
        assert_eq!(m.forward(&[0.3, -2.0]), vec![0.3, -2.0]);
        let m = dense_whitening(
            &MomentEstimate::from_known(vec![0.0; 2], Matrix::from_diagonal(&[4.0, 9.0])).unwrap(),
            &part,
        )
        .unwrap();
        let phi = m.forward(&[2.0, 3.0]);
        assert!((phi[0] - 1.0).abs() < 1e-15 && (phi[1] - 1.0).abs() < 1e-15);
        assert!((m.log_abs_det_forward() + 6.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dense_whitening_decorrelates_draws() {
        let sigma = Matrix::from_rows(&[[1.0, 0.95], [0.95, 1.0]]);
        let m = dense_whitening(&moments(sigma.clone()), &BlockPartition::single(2).unwrap()).unwrap();
        let l = cholesky_lower(&sigma).unwrap();
        let mut rng = stream_rng(5, 0);
        let n = 100_000;
        let mut acc = [0.0; 3];
        let mut z = [0.0; 2];
        let mut x = [0.0; 2];
        for _ in 0..n {
            z[0] = StandardNormal.sample(&mut rng);
            z[1] = StandardNormal.sample(&mut rng);
            l.lower_mul_vec_into(&z, &mut x);
            let phi = m.forward(&x);
            acc[0] += phi[0] * phi[0];
            acc[1] += phi[0] * phi[1];
            acc[2] += phi[1] * phi[1];
        }
        let n = n as f64;
        assert!((acc[0] / n - 1.0).abs() < 0.05);
        assert!((acc[1] / n).abs() < 0.05);
        assert!((acc[2] / n - 1.0).abs() < 0.05);
    }

    #[test]
    fn round_trips_both_modes() {
        let part = BlockPartition::random_effects(4, 2, 3).unwrap();
        let mom = moments(random_spd(11, 1));
        let mut rng = stream_rng(2, 0);
        for map in [dense_whitening(&mom, &part).unwrap(), sparse_whitening(&mom, &part).unwrap()] {
            for _ in 0..20 {
                let theta: Vec<f64> = (0..11).map(|_| rng.random_range(-3.0..3.0)).collect();
                let back = map.inverse(&map.forward(&theta));
                for (a, b) in back.iter().zip(&theta) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
            assert!(map.log_abs_det_forward().is_finite());
        }
    }

    #[test]
    fn sparse_pattern_and_locality() {
        let part = BlockPartition::random_effects(4, 2, 3).unwrap();
        let map = sparse_whitening(&moments(random_spd(11, 3)), &part).unwrap();
        let r = map.forward_matrix();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    for a in part.range(i) {
                        for b in part.range(j) {
                            assert_eq!(r[(a, b)], 0.0);
                        }
                    }
                }
            }
        }
        let mut rng = stream_rng(4, 0);
        let psi: Vec<f64> = (0..11).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta = map.inverse(&psi);
        let mut moved = psi.clone();
        for k in part.range(2) {
            moved[k] += 10.0;
        }
        let theta2 = map.inverse(&moved);
        for i in [0usize, 1, 3] {
            for a in part.range(i) {
                assert_eq!(theta[a], theta2[a]);
            }
        }
    }

    #[test]
    fn sparse_no_fill_in_reproduces_precision() {
        // arrow-patterned precision for two scalar blocks plus one shared coordinate
        let omega = Matrix::from_rows(&[[2.0, 0.0, 0.5], [0.0, 3.0, -0.4], [0.5, -0.4, 1.5]]);
        let sigma = invert_spd(&omega).unwrap();
        let part = BlockPartition::random_effects(2, 1, 1).unwrap();
        let map = sparse_whitening(&moments(sigma), &part).unwrap();
        let r = map.forward_matrix();
        let rtr = r.transpose().matmul(&r).unwrap();
        assert!(rtr.sub(&omega).max_abs() < 1e-8);
    }

    #[test]
    fn sparse_block_diagonal_case() {
        let omega = Matrix::from_rows(&[
            [2.0, 0.3, 0.0, 0.0, 0.0],
            [0.3, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 4.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.5, 0.2],
            [0.0, 0.0, 0.0, 0.2, 1.0],
        ]);
        let part = BlockPartition::new(vec![2, 1, 2]).unwrap();
        let map = sparse_whitening(&moments(invert_spd(&omega).unwrap()), &part).unwrap();
        let r = map.forward_matrix();
        let l0 = cholesky_lower(&Matrix::from_rows(&[[2.0, 0.3], [0.3, 1.0]])).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((r[(a, b)] - l0[(b, a)]).abs() < 1e-10);
            }
        }
        assert!((r[(2, 2)] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn external_factor_validation() {
        let part = BlockPartition::random_effects(2, 1, 1).unwrap();
        let mut l = Matrix::identity(3);
        l[(1, 0)] = 0.5;
        assert!(matches!(
            WhiteningMap::from_sparse_factor(l.clone(), &[0.0; 3], &part),
            Err(Error::PatternViolation(_))
        ));
        l[(1, 0)] = 0.0;
        l[(2, 2)] = 0.0;
        assert!(matches!(
            WhiteningMap::from_sparse_factor(l, &[0.0; 3], &part),
            Err(Error::PatternViolation(_))
        ));
    }

    #[test]
    fn gradient_pull_back_matches_whitened_differences() {
        let (spec, truth) =
            generate_synthetic_glmm(Family::PoissonLog, 4, 3, &[0.2, 0.4], &[-0.5], 1).unwrap();
        let post = GlmmPosterior::new(spec);
        let d = post.dim();
        let mom = moments(random_spd(d, 8));
        for map in [
            dense_whitening(&mom, post.partition()).unwrap(),
            sparse_whitening(&mom, post.partition()).unwrap(),
        ] {
            let wt = WhitenedTarget::new(&post, &map).unwrap();
            let psi = map.forward(&truth.theta());
            assert!(crate::targets::check_gradient(&wt, &psi) < 1e-5);
        }
    }

    fn small_glmm() -> (GlmmPosterior, Vec<f64>) {
        let (spec, truth) =
            generate_synthetic_glmm(Family::PoissonLog, 20, 4, &[0.5, 0.3], &[-0.7], 11).unwrap();
        (GlmmPosterior::new(spec), truth.theta())
    }

    fn kernels(post: &GlmmPosterior, kind: KernelKind, eps: f64) -> Vec<KernelConfig> {
        vec![KernelConfig::new(kind, eps); post.partition().num_blocks()]
    }

    #[test]
    fn sparse_sweep_likelihood_cost() {
        let (post, theta) = small_glmm();
        let mom =
            MomentEstimate::from_known(theta.clone(), Matrix::identity(post.dim()).scale(0.05)).unwrap();
        let map = sparse_whitening(&mom, post.partition()).unwrap();
        let psi = map.forward(&theta);
        for kind in [KernelKind::RandomWalk, KernelKind::Mirror] {
            let mut sampler =
                BlockSampler::new(&post, map.clone(), kernels(&post, kind, 0.5), true, psi.clone()).unwrap();
            let mut rng = stream_rng(12, 0);
            let total = post.spec().total_observations();
            let k_shared = post.partition().size(post.partition().num_blocks() - 1);
            for _ in 0..3 {
                post.reset_counters();
                sampler.sweep(&mut rng).unwrap();
                assert_eq!(post.likelihood_evaluations(), total + k_shared * total);
                assert_eq!(post.gradient_evaluations(), 0);
            }
        }
    }

    #[test]
    fn sparse_block_ratio_is_local() {
        let (post, theta) = small_glmm();
        let mom = moments(random_spd(post.dim(), 21));
        let map = sparse_whitening(&mom, post.partition()).unwrap();
        let psi = map.forward(&theta);
        let mut sampler =
            BlockSampler::new(&post, map, kernels(&post, KernelKind::RandomWalk, 1.0), false, psi.clone())
                .unwrap();
        let cand = [psi[3] + 0.4];
        let before = sampler.block_log_ratio(3, &cand);
        let mut rng = stream_rng(22, 0);
        let mut moved = psi.clone();
        for (j, v) in moved.iter_mut().enumerate().take(20) {
            if j != 3 {
                *v += rng.random_range(-5.0..5.0);
            }
        }
        sampler.set_psi(moved).unwrap();
        assert_eq!(sampler.block_log_ratio(3, &cand), before);
    }

    #[test]
    fn cached_terms_stay_consistent() {
        let (post, theta) = small_glmm();
        let mom =
            MomentEstimate::from_known(theta.clone(), Matrix::identity(post.dim()).scale(0.05)).unwrap();
        for map in [
            dense_whitening(&mom, post.partition()).unwrap(),
            sparse_whitening(&mom, post.partition()).unwrap(),
        ] {
            let psi = map.forward(&theta);
            for kind in [KernelKind::RandomWalk, KernelKind::MirrorMala] {
                let mut sampler =
                    BlockSampler::new(&post, map.clone(), kernels(&post, kind, 0.7), true, psi.clone())
                        .unwrap();
                let mut rng = stream_rng(13, 0);
                for _ in 0..30 {
                    sampler.sweep(&mut rng).unwrap();
                }
                let wt = WhitenedTarget::new(&post, sampler.map()).unwrap();
                let fresh = wt.log_density(sampler.psi());
                assert!((fresh - sampler.current_log_density()).abs() < 1e-8);
                let th = sampler.map().inverse(sampler.psi());
                for (a, b) in th.iter().zip(sampler.theta()) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn dense_single_block_equals_plain_mh() {
        let (spec, truth) = generate_synthetic_glmm(Family::PoissonLog, 3, 4, &[0.5], &[-0.5], 14).unwrap();
        let single = SingleBlock(GlmmPosterior::new(spec), BlockPartition::single(5).unwrap());
        let theta = truth.theta();
        let mom = moments(random_spd(5, 15).scale(0.05));
        let map = dense_whitening(&mom, &single.1).unwrap();
        let psi = map.forward(&theta);
        for kind in [KernelKind::RandomWalk, KernelKind::Mirror] {
            let kernel = KernelConfig::new(kind, 0.8).with_centre(map.whitened_centre().to_vec());
            let mut block =
                BlockSampler::new(&single, map.clone(), vec![kernel.clone()], false, psi.clone()).unwrap();
            let mut rng_a = stream_rng(16, 0);
            let out = block.run(500, 1, &mut rng_a).unwrap();

            let wt = WhitenedTarget::new(&single, &map).unwrap();
            let mut rng_b = stream_rng(16, 0);
            let plain = run_chain(&kernel, &wt, &psi, 500, &mut rng_b).unwrap();
            assert_eq!(out.samples, plain.samples);
        }
    }

    /// A GLMM posterior viewed as one block.
    struct SingleBlock(GlmmPosterior, BlockPartition);

    impl TargetDensity for SingleBlock {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn log_density(&self, theta: &[f64]) -> f64 {
            self.0.log_density(theta)
        }
        fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
            self.0.grad_log_density(theta, grad)
        }
    }

    impl BlockTarget for SingleBlock {
        fn partition(&self) -> &BlockPartition {
            &self.1
        }
        fn local_log_density(&self, _: usize, _: &[f64]) -> f64 {
            unreachable!("no local blocks")
        }
        fn local_grad(&self, _: usize, _: &[f64], _: &mut [f64]) {
            unreachable!("no local blocks")
        }
        fn shared_log_density(&self, theta: &[f64]) -> f64 {
            self.0.log_density(theta)
        }
    }

    #[test]
    fn rejects_wrong_kernel_count_and_partition() {
        let (post, theta) = small_glmm();
        let mom = moments(random_spd(post.dim(), 30));
        let map = sparse_whitening(&mom, post.partition()).unwrap();
        let psi = map.forward(&theta);
        assert!(BlockSampler::new(
            &post,
            map.clone(),
            vec![KernelConfig::new(KernelKind::RandomWalk, 1.0)],
            false,
            psi.clone()
        )
        .is_err());
        let other = dense_whitening(&mom, &BlockPartition::single(post.dim()).unwrap()).unwrap();
        assert!(
            BlockSampler::new(&post, other, kernels(&post, KernelKind::RandomWalk, 1.0), false, psi).is_err()
        );
    }
}
