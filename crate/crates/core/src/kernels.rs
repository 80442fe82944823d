//! Proposal kernels and the Metropolis-Hastings step.
//!
//! All kernels share one Gaussian proposal family `N(mean(θ), ε² Σ*)` with
//! `Σ* = L Lᵀ` taken from a [`MomentEstimate`]; without a preconditioner `Σ* = I`.
//! The kernels differ only in the proposal mean:
//!
//! | kind         | mean from θ                                   |
//! |--------------|-----------------------------------------------|
//! | RandomWalk   | `θ`                                           |
//! | Mirror       | `m(θ) = μ* + c(μ* − θ)`                       |
//! | Mala         | `θ + ε²/2 Σ* ∇log π(θ)`                       |
//! | MirrorMala   | `m(θ) + ε²/2 Σ* ∇log π(m(θ))`                 |
//!
//! `Hmc` runs a fixed number of leapfrog steps and `MirrorHmc` composes the
//! leapfrog map with the reflection `m`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adaptation::MomentEstimate;
use crate::error::{Error, Result};
use crate::linalg::{solve_lower_in_place, Matrix};
use crate::targets::TargetDensity;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    RandomWalk,
    Mirror,
    Mala,
    MirrorMala,
    Hmc,
    MirrorHmc,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] =
        [Self::RandomWalk, Self::Mirror, Self::Mala, Self::MirrorMala, Self::Hmc, Self::MirrorHmc];

    pub fn is_mirror(self) -> bool {
        matches!(self, Self::Mirror | Self::MirrorMala | Self::MirrorHmc)
    }

    pub fn uses_gradient(self) -> bool {
        matches!(self, Self::Mala | Self::MirrorMala | Self::Hmc | Self::MirrorHmc)
    }

    pub fn is_hamiltonian(self) -> bool {
        matches!(self, Self::Hmc | Self::MirrorHmc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RandomWalk => "rw",
            Self::Mirror => "mirror",
            Self::Mala => "mala",
            Self::MirrorMala => "mirror-mala",
            Self::Hmc => "hmc",
            Self::MirrorHmc => "mirror-hmc",
        }
    }

    /// The mirror-type counterpart of a base kernel, `None` if already mirror-type.
    pub fn mirrored(self) -> Option<KernelKind> {
        match self {
            Self::RandomWalk => Some(Self::Mirror),
            Self::Mala => Some(Self::MirrorMala),
            Self::Hmc => Some(Self::MirrorHmc),
            _ => None,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "rw" | "random-walk" | "randomwalk" => Self::RandomWalk,
            "mirror" => Self::Mirror,
            "mala" => Self::Mala,
            "mirror-mala" | "mirrormala" | "mimala" => Self::MirrorMala,
            "hmc" => Self::Hmc,
            "mirror-hmc" | "mirrorhmc" => Self::MirrorHmc,
            _ => return Err(Error::InvalidConfig(format!("unknown kernel '{s}'"))),
        })
    }
}

/// A fully specified proposal kernel.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub epsilon: f64,
    /// Reflection coefficient for mirror-type kernels.
    pub c: f64,
    /// Leapfrog steps for the Hamiltonian kernels.
    pub leapfrog_steps: usize,
    /// Supplies `Σ*`, its Cholesky factor and the default mirror centre `μ*`.
    pub preconditioner: Option<MomentEstimate>,
    /// Overrides `μ*` as the reflection centre.
    pub mirror_centre: Option<Vec<f64>>,
}

impl KernelConfig {
    pub fn new(kind: KernelKind, epsilon: f64) -> Self {
        Self { kind, epsilon, c: 1.0, leapfrog_steps: 1, preconditioner: None, mirror_centre: None }
    }

    pub fn with_preconditioner(mut self, moments: MomentEstimate) -> Self {
        self.preconditioner = Some(moments);
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_centre(mut self, centre: Vec<f64>) -> Self {
        self.mirror_centre = Some(centre);
        self
    }

    pub fn with_leapfrog_steps(mut self, steps: usize) -> Self {
        self.leapfrog_steps = steps;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Reflection centre: the explicit centre if set, otherwise `μ*`.
    pub fn centre(&self) -> Option<&[f64]> {
        self.mirror_centre.as_deref().or_else(|| self.preconditioner.as_ref().map(|m| m.mu_star.as_slice()))
    }

    fn scale(&self) -> Option<&MomentEstimate> {
        self.preconditioner.as_ref()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::NonPositiveEpsilon(self.epsilon));
        }
        if self.kind.is_mirror() && !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("c must be positive, got {}", self.c)));
        }
        if self.kind.is_hamiltonian() && self.leapfrog_steps == 0 {
            return Err(Error::InvalidConfig("leapfrog steps must be at least 1".into()));
        }
        if let Some(m) = &self.preconditioner {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "preconditioner has dimension {} but target has {dim}",
                    m.dim()
                )));
            }
        }
        if self.kind.is_mirror() {
            match self.centre() {
                None => return Err(Error::MissingPreconditioner(self.kind.name())),
                Some(c) if c.len() != dim => {
                    return Err(Error::DimensionMismatch(format!(
                        "mirror centre has dimension {} but target has {dim}",
                        c.len()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Turns a base kernel into its mirror-type counterpart that reflects the
/// current state through `mu_star` with coefficient `c` before proposing.
pub fn mirrorize(base: &KernelConfig, mu_star: &[f64], c: f64) -> Result<KernelConfig> {
    let kind = base
        .kind
        .mirrored()
        .ok_or_else(|| Error::InvalidConfig(format!("kernel '{}' is already mirror-type", base.kind)))?;
    Ok(KernelConfig { kind, c, mirror_centre: Some(mu_star.to_vec()), ..base.clone() })
}

/// Chain position with cached density values and acceptance statistics.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub gradient: Option<Vec<f64>>,
    pub accept_count: u64,
    pub alpha_sum: f64,
    pub iterations: u64,
}

impl ChainState {
    pub fn new<T: TargetDensity + ?Sized>(
        target: &T,
        position: Vec<f64>,
        with_gradient: bool,
    ) -> Result<Self> {
        if position.len() != target.dim() {
            return Err(Error::DimensionMismatch(format!(
                "start has dimension {} but target has {}",
                position.len(),
                target.dim()
            )));
        }
        let (log_density, gradient) = if with_gradient {
            let mut g = vec![0.0; position.len()];
            let l = target.log_density_and_grad(&position, &mut g);
            (l, Some(g))
        } else {
            (target.log_density(&position), None)
        };
        Ok(Self { position, log_density, gradient, accept_count: 0, alpha_sum: 0.0, iterations: 0 })
    }

    /// Mean acceptance probability so far.
    pub fn pjump(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.alpha_sum / self.iterations as f64
        }
    }

    pub fn accept_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.iterations as f64
        }
    }

    pub fn reset_statistics(&mut self) {
        self.accept_count = 0;
        self.alpha_sum = 0.0;
        self.iterations = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub alpha: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub candidate: Vec<f64>,
    pub log_q_forward: f64,
    pub log_q_backward: f64,
    /// Log-density and gradient at the candidate when the kernel needed them.
    pub candidate_eval: Option<(f64, Vec<f64>)>,
}

/// Kernel bound to a target, owning scratch buffers so that steps do not allocate.
pub struct Sampler<'a, T: TargetDensity + ?Sized> {
    kernel: KernelConfig,
    target: &'a T,
    centre: Option<Vec<f64>>,
    log_norm: f64,
    z: Vec<f64>,
    tmp: Vec<f64>,
    mean: Vec<f64>,
    reflected: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    candidate: Vec<f64>,
}

impl<'a, T: TargetDensity + ?Sized> Sampler<'a, T> {
    pub fn new(kernel: &KernelConfig, target: &'a T) -> Result<Self> {
        let d = target.dim();
        kernel.validate(d)?;
        let mut sampler = Self {
            kernel: kernel.clone(),
            target,
            centre: kernel.centre().map(<[f64]>::to_vec),
            log_norm: 0.0,
            z: vec![0.0; d],
            tmp: vec![0.0; d],
            mean: vec![0.0; d],
            reflected: vec![0.0; d],
            grad_a: vec![0.0; d],
            grad_b: vec![0.0; d],
            candidate: vec![0.0; d],
        };
        sampler.refresh_norm();
        Ok(sampler)
    }

    fn refresh_norm(&mut self) {
        let d = self.target.dim() as f64;
        let log_det = self.kernel.scale().map_or(0.0, |m| m.log_det_chol());
        self.log_norm = -d * self.kernel.epsilon.ln() - log_det - 0.5 * d * LN_2PI;
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.kernel.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        self.kernel.epsilon = epsilon;
        self.refresh_norm();
        Ok(())
    }

    pub fn initial_state(&self, position: Vec<f64>) -> Result<ChainState> {
        ChainState::new(self.target, position, self.kernel.kind.uses_gradient())
    }

    fn draw_noise<R: Rng + ?Sized>(z: &mut [f64], rng: &mut R) {
        for z in z.iter_mut() {
            *z = StandardNormal.sample(rng);
        }
    }

    // out = L x (or x without a preconditioner)
    fn apply_chol(kernel: &KernelConfig, x: &[f64], out: &mut [f64]) {
        match kernel.scale() {
            Some(m) => m.chol_lower.lower_mul_vec_into(x, out),
            None => out.copy_from_slice(x),
        }
    }

    // out = Lᵀ x
    fn apply_chol_t(kernel: &KernelConfig, x: &[f64], out: &mut [f64]) {
        match kernel.scale() {
            Some(m) => {
                let l = &m.chol_lower;
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, &xi) in x.iter().enumerate() {
                    for (o, &a) in out[..=i].iter_mut().zip(&l.row(i)[..=i]) {
                        *o += a * xi;
                    }
                }
            }
            None => out.copy_from_slice(x),
        }
    }

    // out = Σ x
    fn apply_sigma(kernel: &KernelConfig, x: &[f64], out: &mut [f64]) {
        match kernel.scale() {
            Some(m) => m.sigma_star.mul_vec_into(x, out),
            None => out.copy_from_slice(x),
        }
    }

    /// Gaussian log-density of a residual `r = θ' − mean` under `N(0, ε²Σ*)`.
    /// `r` is overwritten.
    fn log_q(&self, r: &mut [f64]) -> f64 {
        if let Some(m) = self.kernel.scale() {
            solve_lower_in_place(&m.chol_lower, r).expect("Cholesky factor has a positive diagonal");
        }
        let q: f64 = r.iter().map(|v| v * v).sum();
        self.log_norm - q / (2.0 * self.kernel.epsilon * self.kernel.epsilon)
    }

    /// `out = μ + c(μ − θ)`.
    fn reflect(centre: &[f64], c: f64, theta: &[f64], out: &mut [f64]) {
        for ((o, &m), &t) in out.iter_mut().zip(centre).zip(theta) {
            *o = m + c * (m - t);
        }
    }

    /// Inverse of [`Self::reflect`]: `out = μ + (μ − x)/c`.
    fn unreflect(centre: &[f64], c: f64, x: &[f64], out: &mut [f64]) {
        for ((o, &m), &v) in out.iter_mut().zip(centre).zip(x) {
            *o = m + (m - v) / c;
        }
    }

    /// Residual of `to` under the proposal started at `from`, minus `drift`.
    /// For the mirror kernels this is `(to + c·from) − (1+c)μ`, which makes the
    /// forward and backward values bit-identical when `c = 1`.
    fn residual(&self, from: &[f64], to: &[f64], drift: Option<&[f64]>, out: &mut [f64]) {
        let k = &self.kernel;
        if k.kind.is_mirror() {
            let centre = self.centre.as_deref().expect("validated");
            let onepc = 1.0 + k.c;
            for i in 0..out.len() {
                out[i] = (to[i] + k.c * from[i]) - onepc * centre[i];
            }
        } else {
            for i in 0..out.len() {
                out[i] = to[i] - from[i];
            }
        }
        if let Some(dr) = drift {
            out.iter_mut().zip(dr).for_each(|(o, d)| *o -= d);
        }
    }

    /// Draws a candidate from the current state. For gradient kernels the
    /// candidate's log-density and gradient are evaluated and returned.
    pub fn propose<R: Rng + ?Sized>(&mut self, state: &ChainState, rng: &mut R) -> Result<Proposal> {
        if self.kernel.kind.is_hamiltonian() {
            return Err(Error::InvalidConfig(
                "Hamiltonian kernels are run through mh_step, not propose".into(),
            ));
        }
        let (lqf, lqb, cand_ld, has_grad) = self.propose_full(state, rng)?;
        let candidate_eval = cand_ld.map(|ld| {
            let grad = if has_grad {
                self.grad_b.clone()
            } else {
                let mut g = vec![0.0; self.candidate.len()];
                self.target.grad_log_density(&self.candidate, &mut g);
                g
            };
            (ld, grad)
        });
        Ok(Proposal {
            candidate: self.candidate.clone(),
            log_q_forward: lqf,
            log_q_backward: lqb,
            candidate_eval,
        })
    }

    /// Core proposal: returns (log q fwd, log q bwd, candidate log-density if it
    /// was evaluated, whether `grad_b` holds the candidate gradient).
    fn propose_full<R: Rng + ?Sized>(
        &mut self,
        state: &ChainState,
        rng: &mut R,
    ) -> Result<(f64, f64, Option<f64>, bool)> {
        let k = &self.kernel;
        let d = state.position.len();
        let eps = k.epsilon;
        let half_eps2 = 0.5 * eps * eps;
        let theta = &state.position;
        Self::draw_noise(&mut self.z, rng);
        Self::apply_chol(k, &self.z, &mut self.tmp);

        match k.kind {
            KernelKind::RandomWalk | KernelKind::Mirror => {
                if k.kind == KernelKind::Mirror {
                    Self::reflect(self.centre.as_deref().unwrap(), k.c, theta, &mut self.mean);
                } else {
                    self.mean.copy_from_slice(theta);
                }
                for i in 0..d {
                    self.candidate[i] = self.mean[i] + eps * self.tmp[i];
                }
                let mut r = std::mem::take(&mut self.reflected);
                self.residual(theta, &self.candidate, None, &mut r);
                let lqf = self.log_q(&mut r);
                self.residual(&self.candidate, theta, None, &mut r);
                let lqb = self.log_q(&mut r);
                self.reflected = r;
                Ok((lqf, lqb, None, false))
            }
            KernelKind::Mala | KernelKind::MirrorMala => {
                // forward drift
                if k.kind == KernelKind::Mala {
                    match &state.gradient {
                        Some(g) => self.grad_a.copy_from_slice(g),
                        None => {
                            self.target.grad_log_density(theta, &mut self.grad_a);
                        }
                    }
                    self.reflected.copy_from_slice(theta);
                } else {
                    Self::reflect(self.centre.as_deref().unwrap(), k.c, theta, &mut self.reflected);
                    self.target.grad_log_density(&self.reflected, &mut self.grad_a);
                }
                if self.grad_a.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteGradient);
                }
                let mut drift_f = std::mem::take(&mut self.mean);
                Self::apply_sigma(k, &self.grad_a, &mut drift_f);
                drift_f.iter_mut().for_each(|v| *v *= half_eps2);
                for i in 0..d {
                    self.candidate[i] = self.reflected[i] + drift_f[i] + eps * self.tmp[i];
                }
                let mut r = vec![0.0; d];
                self.residual(theta, &self.candidate, Some(&drift_f), &mut r);
                let lqf = self.log_q(&mut r);

                // candidate density (and gradient at the candidate for MALA)
                let cand_ld;
                if k.kind == KernelKind::Mala {
                    cand_ld = self.target.log_density_and_grad(&self.candidate, &mut self.grad_b);
                } else {
                    cand_ld = self.target.log_density(&self.candidate);
                    Self::reflect(self.centre.as_deref().unwrap(), k.c, &self.candidate, &mut self.reflected);
                    self.target.grad_log_density(&self.reflected, &mut self.grad_b);
                }
                let lqb = if !cand_ld.is_finite() || self.grad_b.iter().any(|g| !g.is_finite()) {
                    f64::NEG_INFINITY
                } else {
                    let mut drift_b = std::mem::take(&mut self.tmp);
                    Self::apply_sigma(k, &self.grad_b, &mut drift_b);
                    drift_b.iter_mut().for_each(|v| *v *= half_eps2);
                    self.residual(&self.candidate, theta, Some(&drift_b), &mut r);
                    self.tmp = drift_b;
                    self.log_q(&mut r)
                };
                self.mean = drift_f;
                Ok((lqf, lqb, Some(cand_ld), k.kind == KernelKind::Mala))
            }
            KernelKind::Hmc | KernelKind::MirrorHmc => unreachable!("handled by hmc"),
        }
    }

    /// One Metropolis-Hastings transition.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<StepOutcome> {
        if self.kernel.kind.is_hamiltonian() {
            return self.hmc_transition(state, rng);
        }
        let (lqf, lqb, cand_ld, has_grad) = self.propose_full(state, rng)?;
        let cand_ld = match cand_ld {
            Some(v) => v,
            None => self.target.log_density(&self.candidate),
        };
        let log_ratio = cand_ld - state.log_density + lqb - lqf;
        let alpha = acceptance(log_ratio);
        let accepted = rng.random::<f64>() < alpha;
        if accepted {
            state.position.copy_from_slice(&self.candidate);
            state.log_density = cand_ld;
            if let Some(g) = state.gradient.as_mut() {
                if has_grad {
                    g.copy_from_slice(&self.grad_b);
                } else {
                    self.target.grad_log_density(&state.position, g);
                }
            }
            state.accept_count += 1;
        }
        state.alpha_sum += alpha;
        state.iterations += 1;
        Ok(StepOutcome { alpha, accepted })
    }

    fn hmc_transition<R: Rng + ?Sized>(
        &mut self,
        state: &mut ChainState,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let c = self.kernel.c;
        let mirror = self.kernel.kind == KernelKind::MirrorHmc;
        // With probability ½ reflect first and integrate from m(θ); otherwise
        // integrate from θ and apply m⁻¹ last. The two maps are mutual inverses
        // (with momentum flips), so choosing between them uniformly keeps the
        // move reversible; the Jacobians are c^d and c^{−d}.
        let reflect_first = mirror && rng.random::<bool>();
        Self::draw_noise(&mut self.z, rng);
        let mut u = std::mem::take(&mut self.z);
        let h0 = -state.log_density + 0.5 * u.iter().map(|v| v * v).sum::<f64>();

        let mut pos = std::mem::take(&mut self.candidate);
        let mut grad = std::mem::take(&mut self.grad_a);
        if reflect_first {
            Self::reflect(self.centre.as_deref().unwrap(), c, &state.position, &mut pos);
            self.target.grad_log_density(&pos, &mut grad);
        } else {
            pos.copy_from_slice(&state.position);
            match &state.gradient {
                Some(g) => grad.copy_from_slice(g),
                None => self.target.grad_log_density(&pos, &mut grad),
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            self.z = u;
            self.candidate = pos;
            self.grad_a = grad;
            return Err(Error::NonFiniteGradient);
        }
        let mut ld = self.leapfrog_whitened(&mut pos, &mut u, &mut grad);
        let mut log_jac = 0.0;
        if mirror {
            let dlnc = pos.len() as f64 * c.ln();
            if reflect_first {
                log_jac = dlnc;
            } else {
                Self::unreflect(self.centre.as_deref().unwrap(), c, &pos.clone(), &mut pos);
                ld = self.target.log_density_and_grad(&pos, &mut grad);
                log_jac = -dlnc;
            }
        }
        let h1 = -ld + 0.5 * u.iter().map(|v| v * v).sum::<f64>();
        let log_ratio = if ld.is_finite() && h1.is_finite() { h0 - h1 + log_jac } else { f64::NEG_INFINITY };
        let alpha = acceptance(log_ratio);
        let accepted = rng.random::<f64>() < alpha;
        if accepted {
            state.position.copy_from_slice(&pos);
            state.log_density = ld;
            if let Some(g) = state.gradient.as_mut() {
                g.copy_from_slice(&grad);
            }
            state.accept_count += 1;
        }
        state.alpha_sum += alpha;
        state.iterations += 1;
        self.z = u;
        self.candidate = pos;
        self.grad_a = grad;
        Ok(StepOutcome { alpha, accepted })
    }

    /// Leapfrog integration in whitened momentum `u ~ N(0, I)`; position moves
    /// by `ε L u`. Returns the log-density at the end point and leaves its
    /// gradient in `grad`.
    fn leapfrog_whitened(&mut self, pos: &mut [f64], u: &mut [f64], grad: &mut [f64]) -> f64 {
        let k = &self.kernel;
        let eps = k.epsilon;
        let mut ld = f64::NAN;
        for _ in 0..k.leapfrog_steps {
            Self::apply_chol_t(k, grad, &mut self.tmp);
            u.iter_mut().zip(&self.tmp).for_each(|(ui, g)| *ui += 0.5 * eps * g);
            Self::apply_chol(k, u, &mut self.tmp);
            pos.iter_mut().zip(&self.tmp).for_each(|(p, v)| *p += eps * v);
            ld = self.target.log_density_and_grad(pos, grad);
            if !ld.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return f64::NEG_INFINITY;
            }
            Self::apply_chol_t(k, grad, &mut self.tmp);
            u.iter_mut().zip(&self.tmp).for_each(|(ui, g)| *ui += 0.5 * eps * g);
        }
        ld
    }
}

#[inline]
fn acceptance(log_ratio: f64) -> f64 {
    if log_ratio.is_nan() {
        0.0
    } else if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Draws a candidate; see [`Sampler::propose`].
pub fn propose<T, R>(kernel: &KernelConfig, state: &ChainState, target: &T, rng: &mut R) -> Result<Proposal>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    Sampler::new(kernel, target)?.propose(state, rng)
}

/// One Metropolis-Hastings transition; see [`Sampler::step`].
pub fn mh_step<T, R>(
    kernel: &KernelConfig,
    state: &mut ChainState,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    Sampler::new(kernel, target)?.step(state, rng)
}

/// One HMC transition with `L` leapfrog steps and inverse mass matrix `mass_inverse`.
pub fn hmc_step<T, R>(
    state: &mut ChainState,
    target: &T,
    epsilon: f64,
    steps: usize,
    mass_inverse: &Matrix,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let d = target.dim();
    let moments = MomentEstimate::from_known(vec![0.0; d], mass_inverse.clone())?;
    let kernel =
        KernelConfig::new(KernelKind::Hmc, epsilon).with_leapfrog_steps(steps).with_preconditioner(moments);
    Sampler::new(&kernel, target)?.step(state, rng)
}

/// Plain leapfrog with identity mass: `steps` updates of `(θ, p)` in place.
/// Returns the log-density at the end point.
pub fn leapfrog<T: TargetDensity + ?Sized>(
    target: &T,
    theta: &mut [f64],
    momentum: &mut [f64],
    epsilon: f64,
    steps: usize,
) -> f64 {
    let mut grad = vec![0.0; theta.len()];
    target.grad_log_density(theta, &mut grad);
    let mut ld = target.log_density(theta);
    for _ in 0..steps {
        momentum.iter_mut().zip(&grad).for_each(|(p, g)| *p += 0.5 * epsilon * g);
        theta.iter_mut().zip(momentum.iter()).for_each(|(t, p)| *t += epsilon * p);
        ld = target.log_density_and_grad(theta, &mut grad);
        momentum.iter_mut().zip(&grad).for_each(|(p, g)| *p += 0.5 * epsilon * g);
    }
    ld
}

/// Output of [`run_chain`].
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub dim: usize,
    /// Reported (back-transformed) samples, row-major `iterations × dim`.
    pub samples: Vec<f64>,
    pub alphas: Vec<f64>,
    pub accepted: u64,
    pub seconds: f64,
    pub final_state: ChainState,
}

impl ChainOutput {
    pub fn iterations(&self) -> usize {
        self.alphas.len()
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.samples[t * self.dim..(t + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn pjump(&self) -> f64 {
        self.alphas.iter().sum::<f64>() / self.alphas.len().max(1) as f64
    }

    pub fn accept_rate(&self) -> f64 {
        self.accepted as f64 / self.alphas.len().max(1) as f64
    }
}

/// Runs `iterations` transitions from `start`, recording every state.
/// Wall time covers the transitions only.
pub fn run_chain<T, R>(
    kernel: &KernelConfig,
    target: &T,
    start: &[f64],
    iterations: usize,
    rng: &mut R,
) -> Result<ChainOutput>
where
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let mut sampler = Sampler::new(kernel, target)?;
    let mut state = sampler.initial_state(start.to_vec())?;
    let d = start.len();
    let mut samples = vec![0.0; iterations * d];
    let mut alphas = Vec::with_capacity(iterations);
    let transform = target.has_transform();
    let clock = Instant::now();
    for t in 0..iterations {
        let out = sampler.step(&mut state, rng)?;
        alphas.push(out.alpha);
        let row = &mut samples[t * d..(t + 1) * d];
        if transform {
            target.back_transform(&state.position, row);
        } else {
            row.copy_from_slice(&state.position);
        }
    }
    let seconds = clock.elapsed().as_secs_f64();
    Ok(ChainOutput { dim: d, samples, alphas, accepted: state.accept_count, seconds, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::targets::{make_mvn, make_oned_target, Mvn};

    fn oned_known(mu: f64) -> MomentEstimate {
        MomentEstimate::from_known(vec![mu], Matrix::identity(1)).unwrap()
    }

    #[test]
    fn mirror_mean_reflects() {
        let target = Mvn::standard(1);
        let k = KernelConfig::new(KernelKind::Mirror, 1.0).with_preconditioner(oned_known(0.5));
        let s = Sampler::new(&k, &target).unwrap();
        let mut out = [0.0];
        Sampler::<Mvn>::reflect(s.centre.as_deref().unwrap(), 1.0, &[1.2], &mut out);
        assert!((out[0] + 0.2).abs() < 1e-15);
        let mut back = [0.0];
        Sampler::<Mvn>::reflect(s.centre.as_deref().unwrap(), 1.0, &out, &mut back);
        assert!((back[0] - 1.2).abs() <= f64::EPSILON * 2.0);
    }

    #[test]
    fn mala_proposal_means_on_standard_normal() {
        // With z drawn, candidate − mean = ε z; recover the mean from log q.
        let target = Mvn::standard(1);
        let eps = 0.8;
        let m = oned_known(0.0);
        for (kind, sign) in [(KernelKind::Mala, 1.0), (KernelKind::MirrorMala, -1.0)] {
            let k = KernelConfig::new(kind, eps).with_preconditioner(m.clone());
            let state = ChainState::new(&target, vec![1.5], true).unwrap();
            let mut rng = stream_rng(1, 0);
            let p = propose(&k, &state, &target, &mut rng).unwrap();
            let mean = sign * (1.0 - eps * eps / 2.0) * 1.5;
            let expected = -0.5 * ((p.candidate[0] - mean) / eps).powi(2) - eps.ln() - 0.5 * LN_2PI;
            assert!((p.log_q_forward - expected).abs() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn symmetric_kernels_have_equal_log_q() {
        let sigma = Matrix::from_rows(&[[1.0, 1.8], [1.8, 4.0]]);
        let target = make_mvn(vec![1.0, 2.0], sigma.clone()).unwrap();
        let m = MomentEstimate::from_known(vec![1.0, 2.0], sigma).unwrap();
        let mut rng = stream_rng(2, 0);
        for kind in [KernelKind::RandomWalk, KernelKind::Mirror] {
            let k = KernelConfig::new(kind, 0.7).with_preconditioner(m.clone());
            let mut s = Sampler::new(&k, &target).unwrap();
            let mut state = s.initial_state(vec![-3.0, 6.0]).unwrap();
            for _ in 0..1000 {
                let p = s.propose(&state, &mut rng).unwrap();
                assert_eq!(p.log_q_forward, p.log_q_backward, "{kind}");
                s.step(&mut state, &mut rng).unwrap();
            }
        }
    }

    #[test]
    fn uphill_rw_always_accepts() {
        let target = Mvn::standard(1);
        let k = KernelConfig::new(KernelKind::RandomWalk, 0.01);
        let mut rng = stream_rng(3, 0);
        let mut state = ChainState::new(&target, vec![5.0], false).unwrap();
        // from far out, tiny steps towards the mode are uphill; check every uphill α
        for _ in 0..200 {
            let before = state.log_density;
            let out = mh_step(&k, &mut state, &target, &mut rng).unwrap();
            if out.accepted && state.log_density >= before {
                assert_eq!(out.alpha, 1.0);
            }
        }
    }

    #[test]
    fn mirrorize_matches_named_kernels() {
        let target = Mvn::standard(2);
        let m = MomentEstimate::from_known(vec![0.1, -0.2], Matrix::identity(2)).unwrap();
        for (base, named) in [
            (KernelKind::RandomWalk, KernelKind::Mirror),
            (KernelKind::Mala, KernelKind::MirrorMala),
            (KernelKind::Hmc, KernelKind::MirrorHmc),
        ] {
            let b = KernelConfig::new(base, 0.5).with_preconditioner(m.clone()).with_leapfrog_steps(3);
            let mirrored = mirrorize(&b, &m.mu_star, 1.0).unwrap();
            assert_eq!(mirrored.kind, named);
            let direct = KernelConfig::new(named, 0.5).with_preconditioner(m.clone()).with_leapfrog_steps(3);
            let a = run_chain(&mirrored, &target, &[0.3, 0.3], 200, &mut stream_rng(4, 0)).unwrap();
            let b = run_chain(&direct, &target, &[0.3, 0.3], 200, &mut stream_rng(4, 0)).unwrap();
            assert_eq!(a.samples, b.samples);
            assert_eq!(a.alphas, b.alphas);
        }
        let already = KernelConfig::new(KernelKind::Mirror, 0.5);
        assert!(mirrorize(&already, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn validation_errors() {
        let target = Mvn::standard(1);
        let k = KernelConfig::new(KernelKind::Mirror, 0.5);
        assert!(matches!(Sampler::new(&k, &target), Err(Error::MissingPreconditioner(_))));
        let k = KernelConfig::new(KernelKind::RandomWalk, 0.0);
        assert!(matches!(Sampler::new(&k, &target), Err(Error::NonPositiveEpsilon(_))));
        let k = KernelConfig::new(KernelKind::Mirror, 0.5).with_centre(vec![0.0]).with_c(-1.0);
        assert!(matches!(Sampler::new(&k, &target), Err(Error::InvalidConfig(_))));
        let k = KernelConfig::new(KernelKind::Hmc, 0.5).with_leapfrog_steps(0);
        assert!(Sampler::new(&k, &target).is_err());
        let k = KernelConfig::new(KernelKind::Mirror, 0.5).with_centre(vec![0.0, 1.0]);
        assert!(matches!(Sampler::new(&k, &target), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn leapfrog_single_step_by_hand() {
        let target = Mvn::standard(1);
        let mut theta = [1.0];
        let mut p = [0.0];
        leapfrog(&target, &mut theta, &mut p, 0.1, 1);
        assert!((theta[0] - 0.995).abs() < 1e-15);
        assert!((p[0] + 0.09975).abs() < 1e-15);
    }

    #[test]
    fn hmc_small_step_accepts_nearly_always() {
        let target = Mvn::standard(3);
        let mut state = ChainState::new(&target, vec![0.5, -0.2, 1.0], true).unwrap();
        let mut rng = stream_rng(5, 0);
        let mut min_alpha: f64 = 1.0;
        for _ in 0..200 {
            let out = hmc_step(&mut state, &target, 1e-4, 5, &Matrix::identity(3), &mut rng).unwrap();
            min_alpha = min_alpha.min(out.alpha);
        }
        assert!(min_alpha > 0.9999);
    }

    #[test]
    fn identical_seed_identical_chain() {
        let target = make_oned_target(3).unwrap();
        let m = oned_known(-0.375);
        for kind in KernelKind::ALL {
            let k = KernelConfig::new(kind, 0.6).with_preconditioner(m.clone()).with_leapfrog_steps(4);
            let a = run_chain(&k, &target, &[0.0], 500, &mut stream_rng(6, 1)).unwrap();
            let b = run_chain(&k, &target, &[0.0], 500, &mut stream_rng(6, 1)).unwrap();
            assert_eq!(a.samples, b.samples, "{kind}");
            assert_eq!(a.alphas, b.alphas, "{kind}");
        }
    }

    #[test]
    fn state_caches_stay_consistent() {
        let target = make_oned_target(2).unwrap();
        let m = oned_known(0.5);
        for kind in KernelKind::ALL {
            let k = KernelConfig::new(kind, 0.9).with_preconditioner(m.clone()).with_leapfrog_steps(2);
            let mut s = Sampler::new(&k, &target).unwrap();
            let mut state = s.initial_state(vec![0.2]).unwrap();
            let mut rng = stream_rng(7, 0);
            for _ in 0..300 {
                s.step(&mut state, &mut rng).unwrap();
                assert_eq!(state.log_density, target.log_density(&state.position), "{kind}");
                if let Some(g) = &state.gradient {
                    let mut fresh = [0.0];
                    target.grad_log_density(&state.position, &mut fresh);
                    assert_eq!(g[0], fresh[0]);
                }
            }
            assert_eq!(state.iterations, 300);
        }
    }

    #[test]
    fn gamma_far_proposals_are_rejected_not_errors() {
        let target = make_oned_target(4).unwrap();
        let k = KernelConfig::new(KernelKind::Mala, 30.0);
        let out = run_chain(&k, &target, &[0.5], 200, &mut stream_rng(8, 0)).unwrap();
        assert!(out.samples.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("MirrorMALA".parse::<KernelKind>().unwrap(), KernelKind::MirrorMala);
        assert_eq!("rw".parse::<KernelKind>().unwrap(), KernelKind::RandomWalk);
        assert_eq!("mirror_hmc".parse::<KernelKind>().unwrap(), KernelKind::MirrorHmc);
        assert!("nuts".parse::<KernelKind>().is_err());
        for k in KernelKind::ALL {
            assert_eq!(k.name().parse::<KernelKind>().unwrap(), k);
        }
    }
}
