//! Efficiency measures: autocorrelation, spectral effective sample size,
//! acceptance summaries and the closed-form acceptance curves for `N(0, 1)`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Biased (divide-by-n) autocovariances of the demeaned series for lags `0..=max_lag`.
fn autocovariances(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let m = mean(series);
    let x: Vec<f64> = series.iter().map(|v| v - m).collect();
    (0..=max_lag)
        .map(|k| x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

fn is_degenerate(series: &[f64]) -> bool {
    let first = series[0];
    series.iter().all(|&v| v == first)
}

/// Sample autocorrelation at lag `k`, normalized by the lag-0 autocovariance.
pub fn autocorrelation(series: &[f64], k: usize) -> Result<f64> {
    if series.len() <= k + 1 {
        return Err(Error::SeriesTooShort { needed: k + 2, got: series.len() });
    }
    if is_degenerate(series) {
        return Err(Error::DegenerateSeries);
    }
    let acov = autocovariances(series, k);
    Ok(acov[k] / acov[0])
}

/// AR fit used for the spectral density at frequency zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ArSpectrum {
    pub spec0: f64,
    pub order: usize,
    pub coefficients: Vec<f64>,
}

/// Spectral density at zero from a Yule-Walker autoregressive fit whose order is
/// chosen by AIC among `0..=⌊10·log10 n⌋`.
pub fn ar_spectrum0(series: &[f64]) -> Result<ArSpectrum> {
    let n = series.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: n });
    }
    if is_degenerate(series) {
        return Err(Error::DegenerateSeries);
    }
    let max_order = ((10.0 * (n as f64).log10()).floor() as usize).min(n - 1);
    let r = autocovariances(series, max_order);

    // Levinson-Durbin recursion, tracking the innovation variance per order.
    let mut best_order = 0;
    let mut best_aic = n as f64 * r[0].ln();
    let mut best_coef: Vec<f64> = Vec::new();
    let mut best_var = r[0];
    let mut phi: Vec<f64> = Vec::with_capacity(max_order);
    let mut v = r[0];
    for k in 1..=max_order {
        let acc: f64 = (1..k).map(|j| phi[j - 1] * r[k - j]).sum();
        let pk = (r[k] - acc) / v;
        let prev = phi.clone();
        for j in 1..k {
            phi[j - 1] = prev[j - 1] - pk * prev[k - j - 1];
        }
        phi.push(pk);
        v *= 1.0 - pk * pk;
        if !(v > 0.0) {
            break;
        }
        let aic = n as f64 * v.ln() + 2.0 * k as f64;
        if aic < best_aic {
            best_aic = aic;
            best_order = k;
            best_coef = phi.clone();
            best_var = v;
        }
    }
    let var_pred = best_var * n as f64 / (n - (best_order + 1)) as f64;
    let denom = 1.0 - best_coef.iter().sum::<f64>();
    Ok(ArSpectrum { spec0: var_pred / (denom * denom), order: best_order, coefficients: best_coef })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub ess: f64,
    /// Efficiency relative to i.i.d. sampling; exceeds 1 for antithetic chains.
    pub efficiency: f64,
}

/// Effective sample size from the AR spectral estimate:
/// `E = var(x) / f̂(0)` with the unbiased sample variance, `ess = n·E`.
pub fn effective_sample_size(series: &[f64]) -> Result<Ess> {
    let n = series.len();
    if n < 100 {
        return Err(Error::SeriesTooShort { needed: 100, got: n });
    }
    let spec = ar_spectrum0(series)?;
    let m = mean(series);
    let var = series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let efficiency = var / spec.spec0;
    Ok(Ess { ess: efficiency * n as f64, efficiency })
}

/// Batch-means efficiency with `⌊√n⌋`-long batches; a cross-check for the
/// spectral estimate.
pub fn batch_means_efficiency(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 100 {
        return Err(Error::SeriesTooShort { needed: 100, got: n });
    }
    if is_degenerate(series) {
        return Err(Error::DegenerateSeries);
    }
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let used = &series[..a * b];
    let m = mean(used);
    let var = used.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (used.len() - 1) as f64;
    let batch_means: Vec<f64> = used.chunks_exact(b).map(mean).collect();
    let bm = mean(&batch_means);
    let bvar = batch_means.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (a - 1) as f64;
    Ok(var / (b as f64 * bvar))
}

/// Mean acceptance probability of RW (and Mirror) on `N(0,1)` with true moments.
pub fn pjump_rw_analytic(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    Ok(2.0 / PI * (2.0 / epsilon).atan())
}

/// Mean acceptance probability of MALA (and MirrorMALA) on `N(0,1)` with true moments.
pub fn pjump_mala_analytic(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    let e = epsilon;
    let e2 = e * e;
    let terms = (4.0 / (e * (e2 + 2.0))).atan()
        + (2.0 / e - e / 2.0).atan()
        + (e / 2.0).atan()
        + (4.0 * e / (e2 * e2 - 2.0 * e2 + 8.0)).atan();
    Ok(terms / PI)
}

/// Per-coordinate and averaged efficiency measures of one chain.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub iterations: usize,
    pub dim: usize,
    pub rho1: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub ess: Vec<f64>,
    pub rho1_mean: f64,
    pub efficiency_mean: f64,
    pub ess_mean: f64,
    pub pjump: f64,
    pub accept_rate: f64,
    pub seconds: f64,
    /// Coordinates whose samples never changed; reported with `E = 0` and `ρ1 = NaN`.
    pub degenerate: Vec<usize>,
}

impl DiagnosticsReport {
    pub fn efficiency_per_second(&self) -> f64 {
        if self.seconds > 0.0 {
            self.efficiency_mean / self.seconds
        } else {
            0.0
        }
    }
}

/// Diagnostics for row-major samples (`T × dim`) and the per-step acceptance
/// probabilities.
pub fn summarize(
    samples: &[f64],
    dim: usize,
    alphas: &[f64],
    accepted: u64,
    seconds: f64,
) -> Result<DiagnosticsReport> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch(format!(
            "{} values do not form rows of length {dim}",
            samples.len()
        )));
    }
    let t = samples.len() / dim;
    if t < 100 {
        return Err(Error::SeriesTooShort { needed: 100, got: t });
    }
    let mut rho1 = Vec::with_capacity(dim);
    let mut efficiency = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    let mut degenerate = Vec::new();
    let mut column = vec![0.0; t];
    for j in 0..dim {
        for (c, row) in column.iter_mut().zip(samples.chunks_exact(dim)) {
            *c = row[j];
        }
        if is_degenerate(&column) {
            degenerate.push(j);
            rho1.push(f64::NAN);
            efficiency.push(0.0);
            ess.push(0.0);
            continue;
        }
        rho1.push(autocorrelation(&column, 1)?);
        let e = effective_sample_size(&column)?;
        efficiency.push(e.efficiency);
        ess.push(e.ess);
    }
    let finite_rho: Vec<f64> = rho1.iter().copied().filter(|v| v.is_finite()).collect();
    let rho1_mean = if finite_rho.is_empty() { f64::NAN } else { mean(&finite_rho) };
    let pjump = if alphas.is_empty() { f64::NAN } else { mean(alphas) };
    Ok(DiagnosticsReport {
        iterations: t,
        dim,
        rho1_mean,
        efficiency_mean: mean(&efficiency),
        ess_mean: mean(&ess),
        rho1,
        efficiency,
        ess,
        pjump,
        accept_rate: accepted as f64 / alphas.len().max(1) as f64,
        seconds,
        degenerate,
    })
}
