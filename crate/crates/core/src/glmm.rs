//! Bayesian generalized linear mixed models with subject-level random effects.
//!
//! Parameters are laid out as `θ = (ξ_1, …, ξ_n, β, ζ)` where `ξ_i ∈ R^r` is the
//! random effect of subject `i`, `β ∈ R^p` the fixed effects and `ζ = vech(W*)`
//! the unconstrained covariance parameter: `W` is the lower Cholesky factor of
//! the random-effect covariance `G = W Wᵀ`, and `W*` equals `W` with its
//! diagonal replaced by `log W_jj`. `ζ` stacks the columns of the lower triangle.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, dot, solve_lower_in_place, solve_lower_transpose_in_place, BlockPartition, Matrix,
};
use crate::rng::stream_rng;
use crate::targets::{sigmoid, softplus, TargetDensity};
use crate::whitening::BlockTarget;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Counts with log link.
    PoissonLog,
    /// Binary responses with logit link.
    BernoulliLogit,
    /// Continuous responses with identity link and known noise sd.
    GaussianIdentity { sd: f64 },
}

impl Family {
    /// Log-likelihood of one observation (up to a constant) and its derivative
    /// with respect to the linear predictor.
    #[inline]
    fn term(self, y: f64, eta: f64) -> (f64, f64) {
        match self {
            Family::PoissonLog => {
                let mu = eta.exp();
                (y * eta - mu, y - mu)
            }
            Family::BernoulliLogit => (y * eta - softplus(eta), y - sigmoid(eta)),
            Family::GaussianIdentity { sd } => {
                let r = (y - eta) / sd;
                (-0.5 * r * r, r / sd)
            }
        }
    }

    fn check_response(self, y: f64) -> bool {
        match self {
            Family::PoissonLog => y >= 0.0 && y.fract() == 0.0,
            Family::BernoulliLogit => y == 0.0 || y == 1.0,
            Family::GaussianIdentity { .. } => y.is_finite(),
        }
    }
}

/// Design and responses of one subject.
#[derive(Debug, Clone)]
pub struct SubjectData {
    /// Fixed-effect design, `n_i × p`.
    pub x: Matrix,
    /// Random-effect design, `n_i × r`.
    pub z: Matrix,
    pub y: Vec<f64>,
}

impl SubjectData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GlmmSpec {
    pub family: Family,
    pub subjects: Vec<SubjectData>,
    pub p: usize,
    pub r: usize,
    /// Prior standard deviation of every β and ζ coordinate.
    pub prior_sd: f64,
    pub fixed_names: Vec<String>,
}

impl GlmmSpec {
    pub fn new(
        family: Family,
        subjects: Vec<SubjectData>,
        p: usize,
        r: usize,
        prior_sd: f64,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::BadSubjectGrouping("no subjects".into()));
        }
        if p == 0 || r == 0 {
            return Err(Error::DimensionMismatch("p and r must be at least 1".into()));
        }
        if !(prior_sd > 0.0) {
            return Err(Error::InvalidConfig(format!("prior sd must be positive, got {prior_sd}")));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::BadSubjectGrouping(format!("subject {i} has no observations")));
            }
            if s.x.rows() != s.len() || s.x.cols() != p || s.z.rows() != s.len() || s.z.cols() != r {
                return Err(Error::DimensionMismatch(format!(
                    "subject {i}: x is {}x{}, z is {}x{}, y has {} entries (p={p}, r={r})",
                    s.x.rows(),
                    s.x.cols(),
                    s.z.rows(),
                    s.z.cols(),
                    s.len()
                )));
            }
            if let Some(bad) = s.y.iter().find(|&&y| !family.check_response(y)) {
                return Err(Error::DimensionMismatch(format!(
                    "subject {i}: response {bad} does not match the {family:?} family"
                )));
            }
        }
        Ok(Self {
            family,
            subjects,
            p,
            r,
            prior_sd,
            fixed_names: (0..p).map(|k| format!("beta{k}")).collect(),
        })
    }

    pub fn with_fixed_names(mut self, names: Vec<String>) -> Self {
        if names.len() == self.p {
            self.fixed_names = names;
        }
        self
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn num_cov_params(&self) -> usize {
        self.r * (self.r + 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.num_subjects() * self.r + self.p + self.num_cov_params()
    }

    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(SubjectData::len).sum()
    }

    /// `n` random-effect blocks of size `r` and a final shared block `(β, ζ)`.
    pub fn partition(&self) -> BlockPartition {
        BlockPartition::random_effects(self.num_subjects(), self.r, self.p + self.num_cov_params())
            .expect("sizes validated")
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for i in 0..self.num_subjects() {
            for k in 0..self.r {
                names.push(if self.r == 1 { format!("xi{}", i + 1) } else { format!("xi{}_{}", i + 1, k) });
            }
        }
        names.extend(self.fixed_names.iter().cloned());
        for k in 0..self.num_cov_params() {
            names.push(if self.num_cov_params() == 1 { "zeta".into() } else { format!("zeta{k}") });
        }
        names
    }
}

/// `ζ = vech(W*)` for SPD `G` with `W = chol(G)`.
pub fn vech_wstar(g: &Matrix) -> Result<Vec<f64>> {
    let w = cholesky_lower(g)?;
    let r = w.rows();
    let mut zeta = Vec::with_capacity(r * (r + 1) / 2);
    for j in 0..r {
        for i in j..r {
            zeta.push(if i == j { w[(i, i)].ln() } else { w[(i, j)] });
        }
    }
    Ok(zeta)
}

/// Dimension `r` with `r(r+1)/2 = len`.
pub fn cov_dim(len: usize) -> Result<usize> {
    let mut r = 0;
    while r * (r + 1) / 2 < len {
        r += 1;
    }
    if r * (r + 1) / 2 != len || r == 0 {
        return Err(Error::DimensionMismatch(format!("{len} is not a triangular number")));
    }
    Ok(r)
}

/// Inverse of [`vech_wstar`]: returns `(W, G = W Wᵀ)`.
pub fn unvech_wstar(zeta: &[f64]) -> Result<(Matrix, Matrix)> {
    let r = cov_dim(zeta.len())?;
    let w = unvech_w(zeta, r);
    let g = w.matmul(&w.transpose())?;
    Ok((w, g))
}

fn unvech_w(zeta: &[f64], r: usize) -> Matrix {
    let mut w = Matrix::zeros(r, r);
    let mut k = 0;
    for j in 0..r {
        for i in j..r {
            w[(i, j)] = if i == j { zeta[k].exp() } else { zeta[k] };
            k += 1;
        }
    }
    w
}

/// Posterior of a [`GlmmSpec`], with evaluation counters.
///
/// The likelihood counter grows by one per observation whose log-likelihood is
/// evaluated; the gradient counter likewise for likelihood gradients.
#[derive(Debug)]
pub struct GlmmPosterior {
    spec: GlmmSpec,
    partition: BlockPartition,
    likelihood_evals: AtomicUsize,
    gradient_evals: AtomicUsize,
}

impl Clone for GlmmPosterior {
    fn clone(&self) -> Self {
        Self::new(self.spec.clone())
    }
}

struct Unpacked<'a> {
    beta: &'a [f64],
    w: Matrix,
}

impl GlmmPosterior {
    pub fn new(spec: GlmmSpec) -> Self {
        let partition = spec.partition();
        Self { spec, partition, likelihood_evals: AtomicUsize::new(0), gradient_evals: AtomicUsize::new(0) }
    }

    pub fn spec(&self) -> &GlmmSpec {
        &self.spec
    }

    pub fn likelihood_evaluations(&self) -> usize {
        self.likelihood_evals.load(Ordering::Relaxed)
    }

    pub fn gradient_evaluations(&self) -> usize {
        self.gradient_evals.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.likelihood_evals.store(0, Ordering::Relaxed);
        self.gradient_evals.store(0, Ordering::Relaxed);
    }

    fn beta_range(&self) -> std::ops::Range<usize> {
        let start = self.spec.num_subjects() * self.spec.r;
        start..start + self.spec.p
    }

    fn zeta_range(&self) -> std::ops::Range<usize> {
        let start = self.beta_range().end;
        start..start + self.spec.num_cov_params()
    }

    fn unpack<'a>(&self, theta: &'a [f64]) -> Unpacked<'a> {
        Unpacked { beta: &theta[self.beta_range()], w: unvech_w(&theta[self.zeta_range()], self.spec.r) }
    }

    fn xi<'a>(&self, theta: &'a [f64], i: usize) -> &'a [f64] {
        &theta[i * self.spec.r..(i + 1) * self.spec.r]
    }

    /// `log p(ξ | ζ) = −Σ log W_jj − ½ |W⁻¹ξ|²` (constant dropped).
    fn re_prior(w: &Matrix, xi: &[f64]) -> f64 {
        let mut u = xi.to_vec();
        solve_lower_in_place(w, &mut u).expect("W has a positive diagonal");
        -w.diagonal().iter().map(|d| d.ln()).sum::<f64>() - 0.5 * dot(&u, &u)
    }

    fn subject_loglik(&self, i: usize, beta: &[f64], xi: &[f64]) -> f64 {
        let s = &self.spec.subjects[i];
        self.likelihood_evals.fetch_add(s.len(), Ordering::Relaxed);
        (0..s.len())
            .map(|j| {
                let eta = dot(s.x.row(j), beta) + dot(s.z.row(j), xi);
                self.spec.family.term(s.y[j], eta).0
            })
            .sum()
    }

    /// Log-likelihood of subject `i` plus the prior of its random effect.
    pub fn subject_log_density(&self, i: usize, xi: &[f64], beta: &[f64], zeta: &[f64]) -> f64 {
        let w = unvech_w(zeta, self.spec.r);
        Self::re_prior(&w, xi) + self.subject_loglik(i, beta, xi)
    }

    /// `log[p(ξ_i'|ζ) Π_j p(y_ij|β, ξ_i')] − log[p(ξ_i|ζ) Π_j p(y_ij|β, ξ_i)]`.
    /// Touches only subject `i`'s data.
    pub fn subject_block_logratio(
        &self,
        i: usize,
        xi_old: &[f64],
        xi_new: &[f64],
        beta: &[f64],
        zeta: &[f64],
    ) -> f64 {
        self.subject_log_density(i, xi_new, beta, zeta) - self.subject_log_density(i, xi_old, beta, zeta)
    }

    fn prior_shared(&self, theta: &[f64]) -> f64 {
        let b = &theta[self.beta_range()];
        let z = &theta[self.zeta_range()];
        -(dot(b, b) + dot(z, z)) / (2.0 * self.spec.prior_sd * self.spec.prior_sd)
    }

    /// Full gradient; returns the log-density as well.
    fn eval_with_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let spec = &self.spec;
        let r = spec.r;
        let Unpacked { beta, w } = self.unpack(theta);
        let inv_var = 1.0 / (spec.prior_sd * spec.prior_sd);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let br = self.beta_range();
        let zr = self.zeta_range();
        let mut grad_w = Matrix::zeros(r, r);
        let log_diag: f64 = w.diagonal().iter().map(|d| d.ln()).sum();
        let mut total = self.prior_shared(theta);
        let mut u = vec![0.0; r];
        let mut v = vec![0.0; r];
        for (i, s) in spec.subjects.iter().enumerate() {
            let xi = self.xi(theta, i);
            u.copy_from_slice(xi);
            solve_lower_in_place(&w, &mut u).expect("W has a positive diagonal");
            total += -log_diag - 0.5 * dot(&u, &u);
            v.copy_from_slice(&u);
            solve_lower_transpose_in_place(&w, &mut v).expect("W has a positive diagonal");
            // ∂/∂ξ of the prior is −W⁻ᵀu; ∂/∂W_ab is (W⁻ᵀu)_a u_b − δ_ab / W_aa.
            for a in 0..r {
                grad[i * r + a] -= v[a];
                for b in 0..=a {
                    grad_w[(a, b)] += v[a] * u[b];
                }
                grad_w[(a, a)] -= 1.0 / w[(a, a)];
            }
            self.likelihood_evals.fetch_add(s.len(), Ordering::Relaxed);
            self.gradient_evals.fetch_add(s.len(), Ordering::Relaxed);
            for j in 0..s.len() {
                let eta = dot(s.x.row(j), beta) + dot(s.z.row(j), xi);
                let (l, dl) = spec.family.term(s.y[j], eta);
                total += l;
                for (g, x) in grad[br.clone()].iter_mut().zip(s.x.row(j)) {
                    *g += dl * x;
                }
                for (g, z) in grad[i * r..(i + 1) * r].iter_mut().zip(s.z.row(j)) {
                    *g += dl * z;
                }
            }
        }
        let mut k = zr.start;
        for j in 0..r {
            for i in j..r {
                grad[k] = if i == j { grad_w[(i, i)] * w[(i, i)] } else { grad_w[(i, j)] };
                k += 1;
            }
        }
        for idx in br.start..zr.end {
            grad[idx] -= theta[idx] * inv_var;
        }
        total
    }
}

impl TargetDensity for GlmmPosterior {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let Unpacked { beta, w } = self.unpack(theta);
        let mut total = self.prior_shared(theta);
        for i in 0..self.spec.num_subjects() {
            let xi = self.xi(theta, i);
            total += Self::re_prior(&w, xi) + self.subject_loglik(i, beta, xi);
        }
        total
    }

    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
        self.eval_with_grad(theta, grad);
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.eval_with_grad(theta, grad)
    }
}

impl BlockTarget for GlmmPosterior {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn local_log_density(&self, block: usize, theta: &[f64]) -> f64 {
        let Unpacked { beta, w } = self.unpack(theta);
        let xi = self.xi(theta, block);
        Self::re_prior(&w, xi) + self.subject_loglik(block, beta, xi)
    }

    fn local_grad(&self, block: usize, theta: &[f64], out: &mut [f64]) {
        let spec = &self.spec;
        let Unpacked { beta, w } = self.unpack(theta);
        let xi = self.xi(theta, block);
        let mut v = xi.to_vec();
        solve_lower_in_place(&w, &mut v).expect("W has a positive diagonal");
        solve_lower_transpose_in_place(&w, &mut v).expect("W has a positive diagonal");
        for (o, vi) in out.iter_mut().zip(&v) {
            *o = -vi;
        }
        let s = &spec.subjects[block];
        self.gradient_evals.fetch_add(s.len(), Ordering::Relaxed);
        for j in 0..s.len() {
            let eta = dot(s.x.row(j), beta) + dot(s.z.row(j), xi);
            let dl = spec.family.term(s.y[j], eta).1;
            for (o, z) in out.iter_mut().zip(s.z.row(j)) {
                *o += dl * z;
            }
        }
    }

    fn shared_log_density(&self, theta: &[f64]) -> f64 {
        self.prior_shared(theta)
    }
}

/// Parameters that generated a synthetic data set.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub xi: Vec<f64>,
    pub beta: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl SyntheticTruth {
    /// The full parameter vector `(ξ, β, ζ)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.xi.clone();
        t.extend(&self.beta);
        t.extend(&self.zeta);
        t
    }
}

/// Simulates a GLMM with an intercept plus standard-normal covariates
/// (`p = beta_true.len()`) and random effects on the first `r` design columns.
pub fn generate_synthetic_glmm(
    family: Family,
    n: usize,
    n_i: usize,
    beta_true: &[f64],
    zeta_true: &[f64],
    seed: u64,
) -> Result<(GlmmSpec, SyntheticTruth)> {
    if n == 0 || n_i == 0 || beta_true.is_empty() {
        return Err(Error::InvalidConfig("need n ≥ 1, n_i ≥ 1 and at least one fixed effect".into()));
    }
    let r = cov_dim(zeta_true.len())?;
    let p = beta_true.len();
    if r > p {
        return Err(Error::DimensionMismatch(format!(
            "random-effect dimension {r} exceeds the {p} design columns"
        )));
    }
    let w = unvech_w(zeta_true, r);
    let mut rng = stream_rng(seed, 0);
    let mut subjects = Vec::with_capacity(n);
    let mut xi_all = Vec::with_capacity(n * r);
    for _ in 0..n {
        let e: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut xi = vec![0.0; r];
        w.lower_mul_vec_into(&e, &mut xi);
        let mut x = Matrix::zeros(n_i, p);
        let mut z = Matrix::zeros(n_i, r);
        let mut y = Vec::with_capacity(n_i);
        for j in 0..n_i {
            x[(j, 0)] = 1.0;
            for k in 1..p {
                x[(j, k)] = StandardNormal.sample(&mut rng);
            }
            for k in 0..r {
                z[(j, k)] = x[(j, k)];
            }
            let eta = dot(x.row(j), beta_true) + dot(z.row(j), &xi);
            y.push(draw_response(family, eta, &mut rng));
        }
        xi_all.extend(&xi);
        subjects.push(SubjectData { x, z, y });
    }
    let spec = GlmmSpec::new(family, subjects, p, r, 10.0)?;
    Ok((spec, SyntheticTruth { xi: xi_all, beta: beta_true.to_vec(), zeta: zeta_true.to_vec() }))
}

fn draw_response<R: Rng + ?Sized>(family: Family, eta: f64, rng: &mut R) -> f64 {
    match family {
        Family::PoissonLog => {
            let mu = eta.exp().min(1e6);
            if mu <= 0.0 {
                0.0
            } else {
                Poisson::new(mu).expect("positive mean").sample(rng)
            }
        }
        Family::BernoulliLogit => f64::from(rng.random::<f64>() < sigmoid(eta)),
        Family::GaussianIdentity { sd } => {
            let z: f64 = StandardNormal.sample(rng);
            eta + sd * z
        }
    }
}

/// A CSV table addressed by header names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: Vec<String>) -> Self {
        Self { headers, rows: Vec::new() }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::SchemaError(format!("missing column '{name}'")))
    }

    fn numeric(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>().map_err(|_| {
            Error::SchemaError(format!(
                "row {}: column '{}' value '{raw}' is not numeric",
                row + 1,
                self.headers[col]
            ))
        })
    }
}

/// Groups row indices by subject id, in order of first appearance.
fn group_rows(table: &Table, subject_col: usize) -> Result<Vec<(String, Vec<usize>)>> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (r, row) in table.rows.iter().enumerate() {
        let id = row[subject_col].clone();
        if id.is_empty() {
            return Err(Error::BadSubjectGrouping(format!("row {} has an empty subject id", r + 1)));
        }
        match index.get(&id) {
            Some(&k) => order[k].1.push(r),
            None => {
                index.insert(id.clone(), order.len());
                order.push((id, vec![r]));
            }
        }
    }
    if order.is_empty() {
        return Err(Error::BadSubjectGrouping("table has no rows".into()));
    }
    Ok(order)
}

fn constant_within(table: &Table, rows: &[usize], col: usize, id: &str) -> Result<()> {
    let first = &table.rows[rows[0]][col];
    if rows.iter().any(|&r| &table.rows[r][col] != first) {
        return Err(Error::BadSubjectGrouping(format!(
            "subject '{id}': column '{}' varies between visits",
            table.headers[col]
        )));
    }
    Ok(())
}

/// Column names for the seizure-count model.
#[derive(Debug, Clone)]
pub struct EpilepsyColumns {
    pub subject: String,
    pub visit: String,
    pub y: String,
    pub base: String,
    pub trt: String,
    pub age: String,
}

impl Default for EpilepsyColumns {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            visit: "visit".into(),
            y: "y".into(),
            base: "base".into(),
            trt: "trt".into(),
            age: "age".into(),
        }
    }
}

fn parse_treatment(raw: &str) -> Option<f64> {
    match raw.to_ascii_lowercase().as_str() {
        "placebo" => Some(0.0),
        "progabide" | "treatment" | "drug" => Some(1.0),
        other => other.parse::<f64>().ok().filter(|v| *v == 0.0 || *v == 1.0),
    }
}

/// Poisson random-intercept model for seizure counts with covariates
/// `(1, Base, Trt, Age, Base×Trt, V4)`. `Base` is `log(baseline/4)`, `Age` is
/// `log(age)` centred by its mean over subjects, `V4` flags the fourth visit.
pub fn build_epilepsy_model(table: &Table, cols: &EpilepsyColumns, prior_sd: f64) -> Result<GlmmSpec> {
    let c_subject = table.column_index(&cols.subject)?;
    let c_visit = table.column_index(&cols.visit)?;
    let c_y = table.column_index(&cols.y)?;
    let c_base = table.column_index(&cols.base)?;
    let c_trt = table.column_index(&cols.trt)?;
    let c_age = table.column_index(&cols.age)?;
    let groups = group_rows(table, c_subject)?;

    let mut log_ages = Vec::with_capacity(groups.len());
    for (id, rows) in &groups {
        constant_within(table, rows, c_base, id)?;
        constant_within(table, rows, c_trt, id)?;
        constant_within(table, rows, c_age, id)?;
        let age = table.numeric(rows[0], c_age)?;
        if !(age > 0.0) {
            return Err(Error::SchemaError(format!("subject '{id}': age must be positive")));
        }
        log_ages.push(age.ln());
    }
    let mean_log_age = log_ages.iter().sum::<f64>() / log_ages.len() as f64;

    let mut subjects = Vec::with_capacity(groups.len());
    for ((id, rows), log_age) in groups.iter().zip(&log_ages) {
        let base_count = table.numeric(rows[0], c_base)?;
        if !(base_count > 0.0) {
            return Err(Error::SchemaError(format!("subject '{id}': baseline count must be positive")));
        }
        let base = (base_count / 4.0).ln();
        let trt = parse_treatment(&table.rows[rows[0]][c_trt]).ok_or_else(|| {
            Error::SchemaError(format!("subject '{id}': treatment must be 0/1 or placebo/progabide"))
        })?;
        let age = log_age - mean_log_age;
        let mut x = Matrix::zeros(rows.len(), 6);
        let mut y = Vec::with_capacity(rows.len());
        for (j, &r) in rows.iter().enumerate() {
            let visit = table.numeric(r, c_visit)?;
            let v4 = f64::from(visit == 4.0);
            x.row_mut(j).copy_from_slice(&[1.0, base, trt, age, base * trt, v4]);
            y.push(table.numeric(r, c_y)?);
        }
        subjects.push(SubjectData {
            z: Matrix::from_row_major(rows.len(), 1, vec![1.0; rows.len()]).expect("sized"),
            x,
            y,
        });
    }
    let names = ["intercept", "base", "trt", "age", "base_x_trt", "v4"];
    Ok(GlmmSpec::new(Family::PoissonLog, subjects, 6, 1, prior_sd)?
        .with_fixed_names(names.iter().map(|s| s.to_string()).collect()))
}

/// How the outpatient mental-health-visit column is coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisitEncoding {
    /// Raw number of visits; mapped to the bands 1–5, 6–14 and ≥15.
    Count,
    /// Already-banded category 0–3 (0 = none).
    Category,
}

#[derive(Debug, Clone)]
pub struct PolypharmacyColumns {
    pub subject: String,
    pub y: String,
    pub gender: String,
    pub race: String,
    pub age: String,
    pub mhv: String,
    pub inptmhv: String,
    pub mhv_encoding: VisitEncoding,
    /// Standardize age to zero mean and unit variance.
    pub scale_age: bool,
}

impl Default for PolypharmacyColumns {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            y: "y".into(),
            gender: "gender".into(),
            race: "race".into(),
            age: "age".into(),
            mhv: "mhv".into(),
            inptmhv: "inptmhv".into(),
            mhv_encoding: VisitEncoding::Count,
            scale_age: false,
        }
    }
}

/// Logistic random-intercept model with covariates
/// `(1, Gender, Race, Age, MHV_1, MHV_2, MHV_3, INPTMHV)`. `Race` is 0 for the
/// reference group and 1 otherwise; `INPTMHV` flags any inpatient visit.
pub fn build_polypharmacy_model(
    table: &Table,
    cols: &PolypharmacyColumns,
    prior_sd: f64,
) -> Result<GlmmSpec> {
    let c_subject = table.column_index(&cols.subject)?;
    let c_y = table.column_index(&cols.y)?;
    let c_gender = table.column_index(&cols.gender)?;
    let c_race = table.column_index(&cols.race)?;
    let c_age = table.column_index(&cols.age)?;
    let c_mhv = table.column_index(&cols.mhv)?;
    let c_inpt = table.column_index(&cols.inptmhv)?;
    let groups = group_rows(table, c_subject)?;

    let (age_shift, age_scale) = if cols.scale_age {
        let ages: Vec<f64> = (0..table.rows.len()).map(|r| table.numeric(r, c_age)).collect::<Result<_>>()?;
        let n = ages.len() as f64;
        let m = ages.iter().sum::<f64>() / n;
        let sd = (ages.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        (m, if sd > 0.0 { sd } else { 1.0 })
    } else {
        (0.0, 1.0)
    };

    let mut subjects = Vec::with_capacity(groups.len());
    for (id, rows) in &groups {
        constant_within(table, rows, c_gender, id)?;
        constant_within(table, rows, c_race, id)?;
        let gender = table.numeric(rows[0], c_gender)?;
        let race = f64::from(table.numeric(rows[0], c_race)? != 0.0);
        let mut x = Matrix::zeros(rows.len(), 8);
        let mut y = Vec::with_capacity(rows.len());
        for (j, &r) in rows.iter().enumerate() {
            let age = (table.numeric(r, c_age)? - age_shift) / age_scale;
            let mhv = table.numeric(r, c_mhv)?;
            let band = match cols.mhv_encoding {
                VisitEncoding::Count => match mhv {
                    v if v >= 15.0 => 3,
                    v if v >= 6.0 => 2,
                    v if v >= 1.0 => 1,
                    _ => 0,
                },
                VisitEncoding::Category => {
                    if !(0.0..=3.0).contains(&mhv) || mhv.fract() != 0.0 {
                        return Err(Error::SchemaError(format!(
                            "row {}: visit category {mhv} outside 0..=3",
                            r + 1
                        )));
                    }
                    mhv as usize
                }
            };
            let inpt = f64::from(table.numeric(r, c_inpt)? > 0.0);
            x.row_mut(j).copy_from_slice(&[
                1.0,
                gender,
                race,
                age,
                f64::from(band == 1),
                f64::from(band == 2),
                f64::from(band == 3),
                inpt,
            ]);
            y.push(table.numeric(r, c_y)?);
        }
        subjects.push(SubjectData {
            z: Matrix::from_row_major(rows.len(), 1, vec![1.0; rows.len()]).expect("sized"),
            x,
            y,
        });
    }
    let names = ["intercept", "gender", "race", "age", "mhv_1", "mhv_2", "mhv_3", "inptmhv"];
    Ok(GlmmSpec::new(Family::BernoulliLogit, subjects, 8, 1, prior_sd)?
        .with_fixed_names(names.iter().map(|s| s.to_string()).collect()))
}

/// Synthetic seizure-count table with the [`EpilepsyColumns`] default schema.
pub fn synthetic_epilepsy_table(subjects: usize, visits: usize, seed: u64) -> Table {
    let mut rng = stream_rng(seed, 1);
    let beta = [0.3, 0.9, -0.9, 0.5, 0.3, -0.1];
    let sd_re = 0.5;
    let mut table = Table::new(["subject", "visit", "y", "base", "trt", "age"].map(String::from).to_vec());
    let ages: Vec<f64> = (0..subjects).map(|_| f64::from(rng.random_range(18..=42))).collect();
    let mean_log_age = ages.iter().map(|a| a.ln()).sum::<f64>() / subjects.max(1) as f64;
    for (i, age) in ages.iter().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        let base_count = (3.1 + 0.7 * z).exp().clamp(6.0, 150.0).round();
        let trt = f64::from(rng.random::<bool>());
        let e: f64 = StandardNormal.sample(&mut rng);
        let xi = sd_re * e;
        let base = (base_count / 4.0).ln();
        let age_c = age.ln() - mean_log_age;
        for v in 1..=visits {
            let v4 = f64::from(v == 4);
            let eta = beta[0]
                + beta[1] * base
                + beta[2] * trt
                + beta[3] * age_c
                + beta[4] * base * trt
                + beta[5] * v4
                + xi;
            let y = draw_response(Family::PoissonLog, eta, &mut rng);
            table.rows.push(vec![
                (i + 1).to_string(),
                v.to_string(),
                format!("{y}"),
                format!("{base_count}"),
                format!("{trt}"),
                format!("{age}"),
            ]);
        }
    }
    table
}

/// Synthetic yearly binary-outcome table with the [`PolypharmacyColumns`] default schema.
pub fn synthetic_polypharmacy_table(subjects: usize, years: usize, seed: u64) -> Table {
    let mut rng = stream_rng(seed, 2);
    let beta = [-2.5, 0.7, -0.5, 0.05, 0.3, 0.8, 1.2, 0.9];
    let sd_re = 2.0;
    let mut table = Table::new(
        ["subject", "year", "y", "gender", "race", "age", "mhv", "inptmhv"].map(String::from).to_vec(),
    );
    for i in 0..subjects {
        let gender = f64::from(rng.random::<bool>());
        let race = f64::from(rng.random::<f64>() < 0.3);
        let age0 = f64::from(rng.random_range(3..=17));
        let e: f64 = StandardNormal.sample(&mut rng);
        let xi = sd_re * e;
        for t in 0..years {
            let age = age0 + t as f64;
            let mhv = if rng.random::<f64>() < 0.5 { 0.0 } else { f64::from(rng.random_range(1..=30)) };
            let inpt = if rng.random::<f64>() < 0.9 { 0.0 } else { f64::from(rng.random_range(1..=3)) };
            let band = [(1.0..=5.0).contains(&mhv), (6.0..=14.0).contains(&mhv), mhv >= 15.0].map(f64::from);
            let eta = beta[0]
                + beta[1] * gender
                + beta[2] * race
                + beta[3] * age
                + beta[4] * band[0]
                + beta[5] * band[1]
                + beta[6] * band[2]
                + beta[7] * f64::from(inpt > 0.0)
                + xi;
            let y = draw_response(Family::BernoulliLogit, eta, &mut rng);
            table.rows.push(vec![
                (i + 1).to_string(),
                (t + 1).to_string(),
                format!("{y}"),
                format!("{gender}"),
                format!("{race}"),
                format!("{age}"),
                format!("{mhv}"),
                format!("{inpt}"),
            ]);
        }
    }
    table
}
