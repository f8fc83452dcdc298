//! Config handling, output files and the `wqed` binary end to end.

use std::path::Path;
use std::process::Command;

use wqed_cli::output::read_metadata;
use wqed_cli::{compare_series, load_series, run_experiment, run_sweep, RunConfig};

fn wqed() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wqed"));
    c.env("RUST_LOG", "warn");
    c
}

fn small(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(
        r#"
        n_emitters = 2
        eta = 0.2
        gamma_dt = 0.05
        gamma_t_max = 1.0
        chi_max = 16
        observables = ["emitter_state", "field", "survival"]
        profile_times = [0.5]
        "#,
    )
    .unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = RunConfig::parse("n_emitters = 4\neta = 0.4").unwrap();
    assert_eq!(cfg, RunConfig::minimal(4, 0.4));
    assert_eq!(cfg.ell(), 40);
    assert_eq!(cfg.chi_max, 128);
    assert!(!cfg.is_markovian());
}

#[test]
fn unknown_keys_are_rejected() {
    let err = RunConfig::parse("n_emitters = 4\neta = 0.4\nchi = 64").unwrap_err();
    assert!(err.to_string().contains("chi"), "{err}");
    assert!(RunConfig::parse("n_emitters = 4\neta = 0.4\n[sweep]\nbeta = [1.0]").is_err());
}

#[test]
fn invalid_values_are_rejected() {
    for text in [
        "n_emitters = 4\neta = 0.4\nobservables = [\"g3\"]",
        "n_emitters = 4\neta = 0.4\nobservables = [\"g2\"]\nn_max = 1",
        "n_emitters = 3\neta = 0.4",
        "n_emitters = 4\neta = 0.001\ngamma_dt = 0.01",
        "n_emitters = 4\neta = -0.1",
        "n_emitters = 4\neta = 0.4\nchi_max = 0",
        "n_emitters = 4\neta = 0.4\nsample_stride = 0",
    ] {
        assert!(RunConfig::parse(text).is_err(), "accepted: {text}");
    }
    assert!(RunConfig::parse("n_emitters = 4\neta = 0.4\nobservables = [\"g3\"]\nn_max = 3").is_ok());
    // The Markovian solver takes odd emitter numbers.
    assert!(RunConfig::parse("n_emitters = 3\neta = 0.0").is_ok());
}

#[test]
fn zero_eta_runs_the_markovian_solver() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::parse("n_emitters = 1\neta = 0.0\ngamma_t_max = 2.0").unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.metadata.solver, "markov");
    let s = load_series(&dir.path().join("markov.csv")).unwrap();
    let last = *s.t.last().unwrap();
    assert!((s.n_exc.last().unwrap() - (-last).exp()).abs() < 1e-6);
}

#[test]
fn small_run_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = run_experiment(&cfg).unwrap();
    for f in ["collision.csv", "metadata.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert!(!out.profiles.is_empty());
    for f in &out.metadata.files {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let series = load_series(&dir.path().join("collision.csv")).unwrap();
    assert_eq!(series.t.len(), out.records.len());
    assert!((series.n_exc[0] - 2.0).abs() < 1e-12);
    assert!(series.n_exc.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn metadata_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = run_experiment(&cfg).unwrap();
    let back = read_metadata(&dir.path().join("metadata.json")).unwrap();
    assert_eq!(back, out.metadata);
    assert_eq!(back.config, cfg);
    assert_eq!(back.ell, 4);
    assert_eq!(back.n_steps, 20);
}

#[test]
fn runs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&small(a.path())).unwrap();
    run_experiment(&small(b.path())).unwrap();
    let read = |d: &Path| std::fs::read_to_string(d.join("collision.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn identical_series_have_zero_deviation() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small(dir.path())).unwrap();
    let s = load_series(&dir.path().join("collision.csv")).unwrap();
    let d = compare_series(&s, &s, None).unwrap();
    assert_eq!(d.max_relative, 0.0);
    assert_eq!(d.points, s.t.len());
}

#[test]
fn sweep_runs_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.observables.clear();
    cfg.profile_times.clear();
    cfg.sweep = Some(toml::from_str("chi_max = [4, 16]").unwrap());
    let s = run_sweep(&cfg, 2).unwrap();
    assert_eq!(s.points.len(), 2);
    assert_eq!(s.pairs.len(), 1);
    assert!(s.max_pairwise_deviation.unwrap() < 0.05);
    assert!(dir.path().join("sweep_summary.json").is_file());
    for p in &s.points {
        assert!(dir.path().join(&p.name).join("collision.csv").is_file());
    }
}

#[test]
fn binary_runs_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "n_emitters = 2\neta = 0.2\ngamma_dt = 0.05\ngamma_t_max = 1.0\n").unwrap();
    let out = dir.path().join("out");
    let status = wqed().arg("run").arg(&config).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let csv = out.join("collision.csv");
    let cmp = wqed().arg("compare").arg(&csv).arg(&csv).output().unwrap();
    assert!(cmp.status.success());
    assert!(String::from_utf8_lossy(&cmp.stdout).contains("within tolerance"));

    std::fs::write(&config, "n_emitters = 2\neta = 0.2\nbogus = 1\n").unwrap();
    let bad = wqed().arg("run").arg(&config).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
