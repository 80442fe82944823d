//! Target densities: the five one-dimensional benchmarks, multivariate normals and
//! the Bayesian logistic regression posterior.
//!
//! Log-densities are unnormalized. Only differences are ever consumed, so each
//! implementation is free to drop constants as long as it does so consistently.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, dot, invert_spd, Matrix};

/// A differentiable unnormalized log-density on `R^d`.
///
/// Samplers always work in the unconstrained coordinates exposed here. Targets
/// with a range transform report samples through [`TargetDensity::back_transform`].
pub trait TargetDensity {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> f64;

    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]);

    /// Both quantities at once; implementations can share work between them.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.grad_log_density(theta, grad);
        self.log_density(theta)
    }

    /// Maps a sampled point to the reported coordinates. Identity by default.
    fn back_transform(&self, xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(xi);
    }

    fn has_transform(&self) -> bool {
        false
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
        (**self).grad_log_density(theta, grad)
    }
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_and_grad(theta, grad)
    }
    fn back_transform(&self, xi: &[f64], out: &mut [f64]) {
        (**self).back_transform(xi, out)
    }
    fn has_transform(&self) -> bool {
        (**self).has_transform()
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
        (**self).grad_log_density(theta, grad)
    }
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_and_grad(theta, grad)
    }
    fn back_transform(&self, xi: &[f64], out: &mut [f64]) {
        (**self).back_transform(xi, out)
    }
    fn has_transform(&self) -> bool {
        (**self).has_transform()
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// The five one-dimensional benchmark targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneDTarget {
    /// N(0, 1).
    StandardNormal,
    /// ¼N(−1, ¼) + ¾N(1, ¼).
    GaussianMixture,
    /// ¾t₄(−¾, s²) + ¼t₄(¾, s²) with s = ⅛√(37/2).
    StudentMixture,
    /// Gamma(4, rate 2), sampled on the log scale.
    LogGamma,
    /// U(−√3, √3), sampled on the logit scale.
    LogitUniform,
}

pub fn make_oned_target(id: u32) -> Result<OneDTarget> {
    Ok(match id {
        1 => OneDTarget::StandardNormal,
        2 => OneDTarget::GaussianMixture,
        3 => OneDTarget::StudentMixture,
        4 => OneDTarget::LogGamma,
        5 => OneDTarget::LogitUniform,
        other => return Err(Error::UnknownTargetId(other)),
    })
}

fn student_scale() -> f64 {
    (37.0_f64 / 2.0).sqrt() / 8.0
}

// Two-component mixture in log space: returns (log density, d/dx).
fn mixture2(x: f64, comps: [(f64, f64); 2], comp: impl Fn(f64, f64) -> (f64, f64)) -> (f64, f64) {
    let (l0, g0) = comp(x, comps[0].1);
    let (l1, g1) = comp(x, comps[1].1);
    let a = comps[0].0.ln() + l0;
    let b = comps[1].0.ln() + l1;
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let total = ea + eb;
    (m + total.ln(), (ea * g0 + eb * g1) / total)
}

impl OneDTarget {
    pub fn id(self) -> u32 {
        match self {
            Self::StandardNormal => 1,
            Self::GaussianMixture => 2,
            Self::StudentMixture => 3,
            Self::LogGamma => 4,
            Self::LogitUniform => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::StandardNormal => "normal",
            Self::GaussianMixture => "normal-mixture",
            Self::StudentMixture => "t4-mixture",
            Self::LogGamma => "gamma",
            Self::LogitUniform => "uniform",
        }
    }

    /// Log-density and derivative in the sampling coordinate.
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Self::StandardNormal => (-0.5 * x * x, -x),
            Self::GaussianMixture => mixture2(x, [(0.25, -1.0), (0.75, 1.0)], |x, m| {
                // component variance 1/4
                let r = x - m;
                (-2.0 * r * r, -4.0 * r)
            }),
            Self::StudentMixture => {
                let s = student_scale();
                mixture2(x, [(0.75, -0.75), (0.25, 0.75)], |x, m| {
                    let u = (x - m) / s;
                    let q = 1.0 + u * u / 4.0;
                    (-2.5 * q.ln(), -2.5 * (u / 2.0) / (q * s))
                })
            }
            Self::LogGamma => {
                let e = x.exp();
                (4.0 * x - 2.0 * e, 4.0 - 2.0 * e)
            }
            Self::LogitUniform => (x - 2.0 * softplus(x), 1.0 - 2.0 * sigmoid(x)),
        }
    }

    pub fn to_reported(self, x: f64) -> f64 {
        match self {
            Self::LogGamma => x.exp(),
            Self::LogitUniform => SQRT3 * (0.5 * x).tanh(),
            _ => x,
        }
    }

    /// Mean and variance of the reported variable.
    pub fn reported_moments(self) -> (f64, f64) {
        match self {
            Self::StandardNormal => (0.0, 1.0),
            Self::GaussianMixture => (0.5, 1.0),
            Self::StudentMixture => (-0.375, 1.0),
            Self::LogGamma => (2.0, 1.0),
            Self::LogitUniform => (0.0, 1.0),
        }
    }

    /// Mean and variance of the sampling coordinate.
    ///
    /// For the Gamma target `log θ` has mean `ψ(4) − log 2` and variance `ψ'(4)`;
    /// for the uniform target the logit coordinate is standard logistic.
    pub fn sampling_moments(self) -> (f64, f64) {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        match self {
            Self::LogGamma => {
                let digamma4 = 1.0 + 0.5 + 1.0 / 3.0 - EULER_GAMMA;
                let trigamma4 = std::f64::consts::PI.powi(2) / 6.0 - 1.0 - 0.25 - 1.0 / 9.0;
                (digamma4 - 2.0_f64.ln(), trigamma4)
            }
            Self::LogitUniform => (0.0, std::f64::consts::PI.powi(2) / 3.0),
            other => other.reported_moments(),
        }
    }

    /// Exact draw of the reported variable, used as an independent oracle.
    pub fn sample_exact<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        match self {
            Self::StandardNormal => z,
            Self::GaussianMixture => {
                let m = if rng.random::<f64>() < 0.25 { -1.0 } else { 1.0 };
                m + 0.5 * z
            }
            Self::StudentMixture => {
                let m = if rng.random::<f64>() < 0.75 { -0.75 } else { 0.75 };
                let chi2: f64 = rand_distr::ChiSquared::new(4.0).unwrap().sample(rng);
                m + student_scale() * z / (chi2 / 4.0).sqrt()
            }
            Self::LogGamma => rand_distr::Gamma::new(4.0, 0.5).unwrap().sample(rng),
            Self::LogitUniform => rng.random_range(-SQRT3..SQRT3),
        }
    }
}

impl TargetDensity for OneDTarget {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.eval(theta[0]).0
    }

    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
        grad[0] = self.eval(theta[0]).1;
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (l, g) = self.eval(theta[0]);
        grad[0] = g;
        l
    }

    fn back_transform(&self, xi: &[f64], out: &mut [f64]) {
        out[0] = self.to_reported(xi[0]);
    }

    fn has_transform(&self) -> bool {
        matches!(self, Self::LogGamma | Self::LogitUniform)
    }
}

/// Multivariate normal `N(μ, Σ)`.
#[derive(Debug, Clone)]
pub struct Mvn {
    mu: Vec<f64>,
    sigma: Matrix,
    precision: Matrix,
    chol: Matrix,
}

pub fn make_mvn(mu: Vec<f64>, sigma: Matrix) -> Result<Mvn> {
    if sigma.rows() != mu.len() || sigma.cols() != mu.len() {
        return Err(Error::DimensionMismatch(format!(
            "mean has length {} but covariance is {}x{}",
            mu.len(),
            sigma.rows(),
            sigma.cols()
        )));
    }
    let chol = cholesky_lower(&sigma)?;
    let precision = invert_spd(&sigma)?;
    Ok(Mvn { mu, sigma, precision, chol })
}

impl Mvn {
    pub fn standard(d: usize) -> Self {
        make_mvn(vec![0.0; d], Matrix::identity(d)).expect("identity is SPD")
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn covariance(&self) -> &Matrix {
        &self.sigma
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    pub fn cholesky(&self) -> &Matrix {
        &self.chol
    }

    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mu.len()).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = vec![0.0; z.len()];
        self.chol.lower_mul_vec_into(&z, &mut out);
        out.iter_mut().zip(&self.mu).for_each(|(o, m)| *o += m);
        out
    }

    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.mu).map(|(t, m)| t - m).collect()
    }
}

impl TargetDensity for Mvn {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let r = self.residual(theta);
        let mut s = 0.0;
        for i in 0..r.len() {
            s += r[i] * dot(self.precision.row(i), &r);
        }
        -0.5 * s
    }

    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
        let r = self.residual(theta);
        for (i, g) in grad.iter_mut().enumerate() {
            *g = -dot(self.precision.row(i), &r);
        }
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.grad_log_density(theta, grad);
        // −½ rᵀΩr = ½ rᵀ∇
        0.5 * theta.iter().zip(&self.mu).zip(grad.iter()).map(|((t, m), g)| (t - m) * g).sum::<f64>()
    }
}

/// Posterior of a Bayesian logistic regression with intercept α, coefficients β
/// and independent `N(0, σ²)` priors. Parameters are ordered `(α, β₁..β_p)`.
#[derive(Debug, Clone)]
pub struct LogisticPosterior {
    x: Matrix,
    y: Vec<f64>,
    prior_sd: f64,
}

pub fn make_logistic_posterior(x: Matrix, y: Vec<f64>, prior_sd: f64) -> Result<LogisticPosterior> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has {} entries",
            x.rows(),
            y.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::DimensionMismatch(format!("response value {bad} is not binary")));
    }
    if !(prior_sd > 0.0) {
        return Err(Error::InvalidConfig(format!("prior sd must be positive, got {prior_sd}")));
    }
    Ok(LogisticPosterior { x, y, prior_sd })
}

impl LogisticPosterior {
    pub fn num_observations(&self) -> usize {
        self.y.len()
    }

    pub fn num_predictors(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    fn linear_predictor(&self, i: usize, theta: &[f64]) -> f64 {
        theta[0] + dot(self.x.row(i), &theta[1..])
    }

    fn prior_term(&self, theta: &[f64]) -> f64 {
        -dot(theta, theta) / (2.0 * self.prior_sd * self.prior_sd)
    }
}

impl TargetDensity for LogisticPosterior {
    fn dim(&self) -> usize {
        self.x.cols() + 1
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let mut s = self.prior_term(theta);
        for (i, &yi) in self.y.iter().enumerate() {
            let eta = self.linear_predictor(i, theta);
            s += yi * eta - softplus(eta);
        }
        s
    }

    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
        self.log_density_and_grad(theta, grad);
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let inv_var = 1.0 / (self.prior_sd * self.prior_sd);
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = -t * inv_var;
        }
        let mut s = self.prior_term(theta);
        for (i, &yi) in self.y.iter().enumerate() {
            let eta = self.linear_predictor(i, theta);
            s += yi * eta - softplus(eta);
            let w = yi - sigmoid(eta);
            grad[0] += w;
            for (g, xij) in grad[1..].iter_mut().zip(self.x.row(i)) {
                *g += w * xij;
            }
        }
        s
    }
}

/// Z-scores every column that is not 0/1 valued. Returns the indices that were scaled.
pub fn standardize_non_binary(x: &mut Matrix) -> Vec<usize> {
    let n = x.rows() as f64;
    let mut scaled = Vec::new();
    for j in 0..x.cols() {
        let col = x.column(j);
        if col.iter().all(|&v| v == 0.0 || v == 1.0) {
            continue;
        }
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            continue;
        }
        let sd = var.sqrt();
        for i in 0..x.rows() {
            x[(i, j)] = (x[(i, j)] - mean) / sd;
        }
        scaled.push(j);
    }
    scaled
}

/// A synthetic credit-scoring-shaped logistic data set: `n` rows, `p` predictors,
/// roughly a third of them binary, the rest continuous with heterogeneous scales.
pub fn synthetic_logistic<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> (Matrix, Vec<f64>) {
    let mut x = Matrix::zeros(n, p);
    let scales: Vec<f64> = (0..p).map(|j| 1.0 + (j % 5) as f64 * 2.0).collect();
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = if j % 3 == 2 {
                f64::from(rng.random::<f64>() < 0.3 + 0.05 * (j % 4) as f64)
            } else {
                let z: f64 = StandardNormal.sample(rng);
                scales[j] * z + (j % 4) as f64
            };
        }
    }
    let beta: Vec<f64> = (0..p)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * 0.6 / scales[j] * (1.0 + (j % 3) as f64) / 2.0
        })
        .collect();
    let offset: f64 = (0..p).map(|j| beta[j] * if j % 3 == 2 { 0.35 } else { (j % 4) as f64 }).sum();
    let y = (0..n)
        .map(|i| {
            let eta = -0.8 - offset + dot(x.row(i), &beta);
            f64::from(rng.random::<f64>() < sigmoid(eta))
        })
        .collect();
    (x, y)
}

/// Largest relative discrepancy between the analytic gradient and central differences.
///
/// Uses step `h = 1e-5 (1 + |θᵢ|)` and error `|fd − g| / max(1, |g|)`.
pub fn check_gradient<T: TargetDensity + ?Sized>(target: &T, point: &[f64]) -> f64 {
    let d = target.dim();
    let mut grad = vec![0.0; d];
    target.grad_log_density(point, &mut grad);
    let mut probe = point.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..d {
        let h = 1e-5 * (1.0 + point[i].abs());
        probe[i] = point[i] + h;
        let up = target.log_density(&probe);
        probe[i] = point[i] - h;
        let down = target.log_density(&probe);
        probe[i] = point[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    worst
}
