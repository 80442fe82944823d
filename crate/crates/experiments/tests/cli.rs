//! Command-line behaviour: outputs, determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirror-mcmc")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = cli(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn header_index(path: &Path, name: &str) -> usize {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().position(|h| h == name).unwrap()
}

#[test]
fn analytic_curve_has_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pjump");
    run_ok(&[
        "run",
        "--experiment",
        "pjump-analytic",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "iterations=1000",
        "--set",
        "burnin=100",
        "--set",
        "check-epsilons=[0.5]",
    ]);
    let rows = read_rows(&out.join("pjump_analytic.csv"));
    let at = |eps: f64| {
        let r = rows.iter().find(|r| (r[0].parse::<f64>().unwrap() - eps).abs() < 1e-9).unwrap();
        (r[1].parse::<f64>().unwrap(), r[2].parse::<f64>().unwrap())
    };
    let round = |x: f64| (x * 1000.0).round() / 1000.0;
    assert_eq!(round(at(0.5).1), 0.990);
    assert_eq!(round(at(1.4).1), 0.790);
    assert_eq!((round(at(2.0).0), round(at(2.0).1)), (0.5, 0.5));
    assert_eq!(round(at(2.1).0), 0.484);
    assert!(out.join("pjump_check.csv").exists());
    assert!(out.join("config.toml").exists());
}

#[test]
fn trajectory_paths_are_short() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    run_ok(&[
        "run",
        "--experiment",
        "trajectory-demo",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "pjump-iterations=2000",
        "--set",
        "tune-adapt=3000",
        "--set",
        "tune-check=2000",
        "--set",
        "tune-tolerance=0.05",
    ]);
    let mut far = 0;
    for entry in std::fs::read_dir(out.join("paths")).unwrap() {
        let path = entry.unwrap().path();
        let n = read_rows(&path).len();
        assert!(n <= 101, "{} has {n} rows", path.display());
        if path.file_name().unwrap().to_string_lossy().starts_with("far_") {
            far += 1;
            assert_eq!(n, 101);
        } else {
            assert_eq!(n, 11);
        }
    }
    assert_eq!(far, 4);
    assert!(out.join("pjump_table.csv").exists());
}

fn sweep(out: &Path, threads: &str) {
    run_ok(&[
        "run",
        "--experiment",
        "oned-sweep",
        "--out",
        out.to_str().unwrap(),
        "--replicates",
        "5",
        "--threads",
        threads,
        "--seed",
        "7",
        "--set",
        "timing=false",
        "--set",
        "targets=[1, 4]",
        "--set",
        "epsilons=[0.5, 2.0]",
        "--set",
        "iterations=3000",
    ]);
}

#[test]
fn reruns_are_byte_identical_and_summaries_average_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    sweep(&a, "1");
    sweep(&b, "2");
    for file in ["rows.csv", "summary.csv", "summary.json", "table1.csv"] {
        let (x, y) = (std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
        assert!(x == y, "{file} differs between reruns");
    }

    let rows_path = a.join("rows.csv");
    let rows = read_rows(&rows_path);
    let (t, k, e, v) = (
        header_index(&rows_path, "target"),
        header_index(&rows_path, "kernel"),
        header_index(&rows_path, "epsilon"),
        header_index(&rows_path, "E_mean"),
    );
    let summary_path = a.join("summary.csv");
    let summary = read_rows(&summary_path);
    let (st, sk, se, sv, sn) = (
        header_index(&summary_path, "target"),
        header_index(&summary_path, "kernel"),
        header_index(&summary_path, "epsilon"),
        header_index(&summary_path, "E_mean"),
        header_index(&summary_path, "replicates"),
    );
    assert_eq!(summary.len(), 2 * 4 * 2);
    for s in &summary {
        let cell: Vec<f64> = rows
            .iter()
            .filter(|r| r[t] == s[st] && r[k] == s[sk] && r[e] == s[se])
            .map(|r| r[v].parse().unwrap())
            .collect();
        assert_eq!(cell.len(), 5);
        assert_eq!(s[sn].parse::<usize>().unwrap(), 5);
        let mean = cell.iter().sum::<f64>() / cell.len() as f64;
        let reported: f64 = s[sv].parse().unwrap();
        assert!((mean - reported).abs() <= 1e-12 * mean.abs().max(1.0), "{mean} vs {reported}");
    }
    let seconds = header_index(&rows_path, "seconds");
    assert!(rows.iter().all(|r| r[seconds].is_empty()));
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();

    let code = |args: &[&str]| cli(args).status.code().unwrap();
    assert_eq!(code(&["run", "--experiment", "logistic", "--out", o, "--set", "no-such-key=1"]), 2);
    assert_eq!(code(&["run", "--experiment", "oned-sweep", "--out", o, "--set", "iterations=0"]), 2);

    let bad_file = dir.path().join("bad.toml");
    std::fs::write(&bad_file, "experiment = \"logistic\"\niterations = \"many\"\n").unwrap();
    assert_eq!(code(&["run", "--config", bad_file.to_str().unwrap(), "--out", o]), 2);

    let missing = dir.path().join("missing.csv");
    assert_eq!(
        code(&[
            "run",
            "--experiment",
            "logistic",
            "--out",
            o,
            "--set",
            &format!("data=\"{}\"", missing.display())
        ]),
        3
    );

    let bad_data = dir.path().join("bad.csv");
    std::fs::write(&bad_data, "y,x1\n1,0.5\n2,0.1\n").unwrap();
    assert_eq!(
        code(&[
            "run",
            "--experiment",
            "logistic",
            "--out",
            o,
            "--set",
            &format!("data=\"{}\"", bad_data.display())
        ]),
        3
    );

    let no_subject = dir.path().join("epi.csv");
    std::fs::write(&no_subject, "seizures,visit\n3,1\n").unwrap();
    assert_eq!(
        code(&[
            "run",
            "--experiment",
            "glmm",
            "--out",
            o,
            "--set",
            "model=\"epilepsy\"",
            "--set",
            &format!("data=\"{}\"", no_subject.display())
        ]),
        3
    );
}

#[test]
fn synthetic_data_feeds_a_logistic_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("credit.csv");
    run_ok(&[
        "synth",
        "logistic",
        "--out",
        data.to_str().unwrap(),
        "--rows",
        "200",
        "--cols",
        "3",
        "--seed",
        "4",
    ]);
    let out = dir.path().join("run");
    run_ok(&[
        "run",
        "--experiment",
        "logistic",
        "--out",
        out.to_str().unwrap(),
        "--set",
        &format!("data=\"{}\"", data.display()),
        "--set",
        "iterations=2000",
        "--set",
        "burnin=2000",
        "--set",
        "burnin-segment=1000",
        "--set",
        "kernels=[\"RW=rw@1.0\", \"MirrorMALA1/2=mirror-mala@0.5\"]",
    ]);
    assert_eq!(read_rows(&out.join("summary.csv")).len(), 2);
    assert!(out.join("marginals").join("marginal_alpha.csv").exists());
    assert!(out.join("marginals").join("marginal_beta_x3.csv").exists());
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = cli(&["config", "--experiment", "glmm", "--preset", "paper", "--seed", "11"]);
    assert!(first.status.success());
    let file = dir.path().join("glmm.toml");
    std::fs::write(&file, &first.stdout).unwrap();
    let second = cli(&["config", "--config", file.to_str().unwrap()]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert_eq!(first.stdout, second.stdout);
}
