//! Bayesian logistic regression with preconditioned and plain kernels.

use std::path::Path;

use mirror_mcmc::glmm::Table;
use mirror_mcmc::kernels::KernelKind;
use mirror_mcmc::linalg::Matrix;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::{
    make_logistic_posterior, standardize_non_binary, synthetic_logistic, TargetDensity,
};

use super::{job_stream, row_key};
use crate::chain::{burnin_moments, run_parallel, run_variant};
use crate::config::ExperimentConfig;
use crate::error::{ExperimentError, Result};
use crate::marginals::emit_marginals;
use crate::output::Row;
use crate::variant::Variant;

/// Reads a numeric CSV: the `response` column must be 0/1, every other
/// column becomes a predictor.
pub fn read_logistic_csv(path: &Path, response: &str) -> Result<(Matrix, Vec<f64>, Vec<String>)> {
    let table = Table::from_path(path)?;
    let yc = table.column_index(response)?;
    if table.rows.is_empty() {
        return Err(ExperimentError::Data(format!("{}: no data rows", path.display())));
    }
    let names: Vec<String> =
        table.headers.iter().enumerate().filter(|(j, _)| *j != yc).map(|(_, h)| h.clone()).collect();
    let p = names.len();
    if p == 0 {
        return Err(ExperimentError::Data(format!("{}: no predictor columns", path.display())));
    }
    let mut x = Matrix::zeros(table.rows.len(), p);
    let mut y = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.headers.len() {
            return Err(ExperimentError::Data(format!(
                "{}: row {} has {} fields",
                path.display(),
                i + 2,
                row.len()
            )));
        }
        let parse = |j: usize| {
            row[j].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                ExperimentError::Data(format!(
                    "{}: row {}, column '{}' is not a number",
                    path.display(),
                    i + 2,
                    table.headers[j]
                ))
            })
        };
        let yi = parse(yc)?;
        if yi != 0.0 && yi != 1.0 {
            return Err(ExperimentError::Data(format!(
                "{}: response in row {} is not 0/1",
                path.display(),
                i + 2
            )));
        }
        y.push(yi);
        let mut k = 0;
        for j in (0..row.len()).filter(|&j| j != yc) {
            x[(i, k)] = parse(j)?;
            k += 1;
        }
    }
    Ok((x, y, names))
}

/// The configured data set, standardized if requested, and a label for it.
pub fn logistic_data(cfg: &ExperimentConfig) -> Result<(Matrix, Vec<f64>, Vec<String>, String)> {
    let (mut x, y, names, label) = match &cfg.data {
        Some(path) => {
            let (x, y, names) = read_logistic_csv(path, &cfg.response)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (x, y, names, format!("logistic-{stem}"))
        }
        None => {
            let mut rng =
                stream_rng(cfg.seed, job_stream(&[&"logistic-data", &cfg.observations, &cfg.predictors]));
            let (x, y) = synthetic_logistic(cfg.observations, cfg.predictors, &mut rng);
            let names = (1..=cfg.predictors).map(|j| format!("x{j}")).collect();
            (x, y, names, format!("logistic-synthetic-{}x{}", cfg.observations, cfg.predictors))
        }
    };
    if cfg.standardize {
        standardize_non_binary(&mut x);
    }
    Ok((x, y, names, label))
}

/// The variant whose chain feeds the marginal densities: MirrorMALA at ε = 0.5
/// if configured, otherwise the first MirrorMALA variant.
fn marginal_variant(variants: &[Variant]) -> Option<usize> {
    let mm = |v: &Variant| v.kind == KernelKind::MirrorMala && v.preconditioned;
    variants.iter().position(|v| mm(v) && v.epsilon() == Some(0.5)).or_else(|| variants.iter().position(mm))
}

pub fn run_logistic(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    let variants = cfg.variants()?;
    let (x, y, names, label) = logistic_data(cfg)?;
    let target = make_logistic_posterior(x, y, cfg.prior_sd)?;
    let d = target.dim();
    let mut params = vec!["alpha".to_string()];
    params.extend(names.iter().map(|n| format!("beta_{n}")));

    let reps: Vec<usize> = (0..cfg.replicates).collect();
    let burn = run_parallel(cfg.threads, &reps, |&rep| {
        let stream = job_stream(&[&"burnin", &label, &cfg.burnin, &cfg.burnin_segment, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        burnin_moments(
            &target,
            &vec![0.0; d],
            cfg.burnin,
            cfg.burnin_segment_len(),
            cfg.burnin_epsilon,
            true,
            &mut rng,
        )
    })?;

    let keep = marginal_variant(&variants);
    let jobs: Vec<(usize, usize)> =
        (0..variants.len()).flat_map(|v| reps.iter().map(move |&r| (v, r))).collect();
    let results = run_parallel(cfg.threads, &jobs, |&(vi, rep)| {
        let v = &variants[vi];
        let (moments, start) = &burn[rep];
        let stream = job_stream(&[&"logistic", &label, &v.label, &rep]);
        let mut rng = stream_rng(cfg.seed, stream);
        let run = run_variant(v, &target, moments, start, cfg.iterations, cfg.tune_settings(), &mut rng)?;
        let key = row_key(
            cfg,
            &label,
            &v.label,
            v.kind.name(),
            run.epsilon,
            v.epsilon().is_none(),
            v.c,
            d,
            stream,
            rep,
            cfg.burnin,
        );
        let samples = (keep == Some(vi) && rep == 0).then_some(run.output.samples);
        Ok((Row::new(key, &run.report, cfg.timing), samples))
    })?;
    let mut rows = Vec::with_capacity(results.len());
    for (row, samples) in results {
        if let Some(s) = samples {
            emit_marginals(&s, d, &params, cfg.marginal_bins, &cfg.out.join("marginals"))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_loader_checks_values() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "a,y,b\n1.5,1,0\n2.5,0,1\n").unwrap();
        let (x, y, names) = read_logistic_csv(&good, "y").unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(y, vec![1.0, 0.0]);
        assert_eq!(x.row(1), &[2.5, 1.0]);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,y\n1.5,2\n").unwrap();
        assert!(matches!(read_logistic_csv(&bad, "y"), Err(ExperimentError::Data(_))));
        std::fs::write(&bad, "a,y\nx,1\n").unwrap();
        assert!(matches!(read_logistic_csv(&bad, "y"), Err(ExperimentError::Data(_))));
        assert_eq!(read_logistic_csv(&bad, "z").unwrap_err().exit_code(), 3);
    }
}
