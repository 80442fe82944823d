//! Marginal density data: histogram densities next to a moment-matched normal curve.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{ExperimentError, Result};
use crate::output::{write_json, write_table};

/// Histogram of one coordinate with the normal density of equal mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub centres: Vec<f64>,
    pub density: Vec<f64>,
    pub normal: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// The series never changed; no histogram is formed.
    pub degenerate: bool,
}

pub fn marginal(values: &[f64], bins: usize) -> Result<Marginal> {
    if bins < 10 {
        return Err(ExperimentError::Config(format!("marginals need at least 10 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(ExperimentError::Data("marginal of an empty series".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(Marginal {
            centres: Vec::new(),
            density: Vec::new(),
            normal: Vec::new(),
            mean,
            sd: 0.0,
            degenerate: true,
        });
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let centres: Vec<f64> = (0..bins).map(|k| lo + (k as f64 + 0.5) * width).collect();
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let normal = centres
        .iter()
        .map(|x| (-0.5 * ((x - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
        .collect();
    Ok(Marginal { centres, density, normal, mean, sd, degenerate: false })
}

#[derive(Debug, Serialize)]
struct MarginalMeta<'a> {
    parameter: &'a str,
    file: Option<String>,
    mean: f64,
    sd: f64,
    degenerate: bool,
}

/// Writes `marginal_<name>.csv` per coordinate and `marginals.json` with the
/// per-coordinate metadata, flagging degenerate series. Returns the CSV paths.
pub fn emit_marginals(
    samples: &[f64],
    dim: usize,
    names: &[String],
    bins: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if names.len() != dim || dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(ExperimentError::Data("sample matrix does not match the parameter names".into()));
    }
    let mut files = Vec::new();
    let mut meta = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let column: Vec<f64> = samples.iter().skip(j).step_by(dim).copied().collect();
        let m = marginal(&column, bins)?;
        let file = (!m.degenerate).then(|| format!("marginal_{}.csv", sanitize(name)));
        if let Some(f) = &file {
            let rows: Vec<Vec<f64>> =
                (0..m.centres.len()).map(|k| vec![m.centres[k], m.density[k], m.normal[k]]).collect();
            let path = dir.join(f);
            write_table(&path, &["x", "density", "normal_density"], &rows)?;
            files.push(path);
        }
        meta.push(MarginalMeta { parameter: name, file, mean: m.mean, sd: m.sd, degenerate: m.degenerate });
    }
    write_json(&dir.join("marginals.json"), &meta)?;
    Ok(files)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mirror_mcmc::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn normal_draws_match_the_normal_curve() {
        let mut rng = stream_rng(11, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let m = marginal(&xs, 50).unwrap();
        let dev = m.density.iter().zip(&m.normal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 0.02, "max deviation {dev}");
        let area: f64 = m.density.iter().sum::<f64>() * (m.centres[1] - m.centres[0]);
        assert!((area - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_column_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![1.0, 3.0, 1.0, 4.0, 1.0, 5.0];
        let files = emit_marginals(&samples, 2, &["a".into(), "b".into()], 10, dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("marginals.json")).unwrap())
                .unwrap();
        assert_eq!(meta[0]["degenerate"], true);
        assert_eq!(meta[1]["degenerate"], false);
    }

    #[test]
    fn identical_columns_give_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = stream_rng(3, 0);
        let samples: Vec<f64> = (0..500)
            .flat_map(|_| {
                let v: f64 = rng.random();
                [v, v]
            })
            .collect();
        let files = emit_marginals(&samples, 2, &["p".into(), "q".into()], 20, dir.path()).unwrap();
        assert_eq!(std::fs::read(&files[0]).unwrap(), std::fs::read(&files[1]).unwrap());
    }

    #[test]
    fn rejects_too_few_bins() {
        assert!(marginal(&[1.0, 2.0], 9).is_err());
    }
}
