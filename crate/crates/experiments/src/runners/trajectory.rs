//! Sample paths and acceptance rates on the bivariate normal demo target.

use mirror_mcmc::adaptation::MomentEstimate;
use mirror_mcmc::diagnostics::summarize;
use mirror_mcmc::kernels::run_chain;
use mirror_mcmc::linalg::Matrix;
use mirror_mcmc::rng::stream_rng;
use mirror_mcmc::targets::{make_mvn, Mvn};
use serde::Serialize;

use super::{job_stream, row_key};
use crate::chain::{build_kernel, burnin_moments, resolve_epsilon};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{write_csv, write_table, Row};
use crate::variant::Variant;

pub const DEMO_MEAN: [f64; 2] = [1.0, 2.0];
pub const DEMO_COV: [[f64; 2]; 2] = [[1.0, 1.8], [1.8, 4.0]];
/// Start of the preconditioned paths, far from the bulk of the target.
pub const FAR_START: [f64; 2] = [-3.0, 6.0];
/// Start of the unpreconditioned paths, inside the 95% contour.
pub const NEAR_START: [f64; 2] = [-0.5, -1.0];
/// Length of the unpreconditioned paths.
pub const SHORT_PATH: usize = 10;
/// An off-centre reflection point for the asymmetric-mirror check.
pub const OFF_CENTRE: [f64; 2] = [0.0, 1.0];

pub fn demo_target() -> Mvn {
    make_mvn(DEMO_MEAN.to_vec(), Matrix::from_rows(&DEMO_COV)).expect("demo covariance is SPD")
}

/// A stored path: the start followed by every state of the chain.
#[derive(Debug, Clone)]
pub struct Path {
    pub name: String,
    pub kernel: String,
    pub epsilon: f64,
    pub points: Vec<[f64; 2]>,
}

/// Simulated acceptance rate of one kernel setting.
#[derive(Debug, Clone, Serialize)]
pub struct PjumpEntry {
    pub setting: String,
    pub kernel: String,
    pub epsilon: f64,
    pub centre_x1: Option<f64>,
    pub centre_x2: Option<f64>,
    pub iterations: usize,
    pub pjump: f64,
    pub accept_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub rows: Vec<Row>,
    pub paths: Vec<Path>,
    pub pjump: Vec<PjumpEntry>,
}

fn variants(specs: &[&str]) -> Vec<Variant> {
    specs.iter().map(|s| s.parse().expect("built-in variant")).collect()
}

/// Writes `paths/<setting>_<kernel>.csv` for the preconditioned 100-step paths
/// and the unpreconditioned 10-step paths, and `pjump_table.csv` with long-run
/// acceptance rates of the unpreconditioned kernels.
pub fn run_trajectory(cfg: &ExperimentConfig) -> Result<TrajectoryResult> {
    let target = demo_target();
    let mut paths = Vec::new();
    let mut pjump = Vec::new();
    let mut rows = Vec::new();

    // Preconditioned kernels with moments from a preliminary isotropic random walk.
    let mut rng = stream_rng(cfg.seed, job_stream(&[&"trajectory-burnin", &cfg.burnin]));
    let (moments, _) = burnin_moments(
        &target,
        &FAR_START,
        cfg.burnin,
        cfg.burnin,
        Some(cfg.burnin_epsilon.unwrap_or(1.0)),
        false,
        &mut rng,
    )?;
    let far = variants(&[
        "RW=rw@tuned=0.3",
        "Mirror=mirror@0.5",
        "MALA=mala@tuned=0.57",
        "MirrorMALA=mirror-mala@0.5",
    ]);
    for v in &far {
        let mut rng = stream_rng(cfg.seed, job_stream(&[&"trajectory-far", &v.label]));
        let eps = resolve_epsilon(v, &target, &moments, &moments.mu_star, cfg.tune_settings(), &mut rng)?;
        let out = run_chain(&build_kernel(v, eps, &moments), &target, &FAR_START, cfg.iterations, &mut rng)?;
        let mut points = vec![FAR_START];
        points.extend(out.samples.chunks(2).map(|s| [s[0], s[1]]));
        paths.push(Path { name: "far".into(), kernel: v.label.clone(), epsilon: eps, points });
    }

    // Unpreconditioned kernels, including the leapfrog baseline; mirrors reflect
    // through the true mean unless an explicit centre is given.
    let truth = MomentEstimate::isotropic(DEMO_MEAN.to_vec());
    let off = MomentEstimate::isotropic(OFF_CENTRE.to_vec());
    let near = variants(&[
        "RW=rw@tuned=0.3;plain",
        "MALA=mala@tuned=0.6;plain",
        "HMC=hmc@0.7;L=6;plain",
        "Mirror=mirror@0.5;plain",
        "MirrorMALA=mirror-mala@0.5;plain",
        "MirrorHMC=mirror-hmc@0.7;L=3;plain",
    ]);
    let settings: Vec<(&str, &Variant, &MomentEstimate)> = near
        .iter()
        .map(|v| ("near", v, &truth))
        .chain(
            near.iter()
                .filter(|v| v.label == "Mirror" || v.label == "MirrorMALA")
                .map(|v| ("off-centre", v, &off)),
        )
        .collect();
    for (setting, v, centre) in settings {
        let stream = job_stream(&[&"trajectory", &setting, &v.label]);
        let mut rng = stream_rng(cfg.seed, stream);
        let eps = resolve_epsilon(v, &target, centre, &DEMO_MEAN, cfg.tune_settings(), &mut rng)?;
        let kernel = build_kernel(v, eps, centre);
        if setting == "near" {
            let out = run_chain(&kernel, &target, &NEAR_START, SHORT_PATH, &mut rng)?;
            let mut points = vec![NEAR_START];
            points.extend(out.samples.chunks(2).map(|s| [s[0], s[1]]));
            paths.push(Path { name: "near".into(), kernel: v.label.clone(), epsilon: eps, points });
        }
        let out = run_chain(&kernel, &target, &NEAR_START, cfg.pjump_iterations, &mut rng)?;
        let report = summarize(&out.samples, 2, &out.alphas, out.accepted, out.seconds)?;
        let centre_xy = v.kind.is_mirror().then(|| centre.mu_star.clone());
        pjump.push(PjumpEntry {
            setting: setting.into(),
            kernel: v.label.clone(),
            epsilon: eps,
            centre_x1: centre_xy.as_ref().map(|c| c[0]),
            centre_x2: centre_xy.as_ref().map(|c| c[1]),
            iterations: cfg.pjump_iterations,
            pjump: report.pjump,
            accept_rate: report.accept_rate,
        });
        let mut key = row_key(
            cfg,
            &format!("bivariate-normal-{setting}"),
            &v.label,
            v.kind.name(),
            eps,
            v.epsilon().is_none(),
            v.c,
            2,
            stream,
            0,
            0,
        );
        key.iterations = cfg.pjump_iterations;
        rows.push(Row::new(key, &report, cfg.timing));
    }

    for p in &paths {
        let table: Vec<Vec<f64>> =
            p.points.iter().enumerate().map(|(t, x)| vec![t as f64, x[0], x[1]]).collect();
        let file = format!("{}_{}.csv", p.name, p.kernel.to_ascii_lowercase());
        write_table(&cfg.out.join("paths").join(file), &["iteration", "x1", "x2"], &table)?;
    }
    write_csv(&cfg.out.join("pjump_table.csv"), &pjump)?;
    Ok(TrajectoryResult { rows, paths, pjump })
}
