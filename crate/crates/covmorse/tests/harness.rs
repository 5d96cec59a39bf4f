use covmorse::harness::{
    check, convergence_table, load_report, run_experiment, table, ExperimentConfig, RunOptions, CONVERGENCE_HEADER,
    COUNTS_HEADER, SANDWICH_HEADER,
};
use covmorse::Error;
use std::fs;

const TINY: &str = r#"
name = "tiny"
seed = 1
k_list = [1, 2]
q_list = [0, 1]
lambda_list = [0.5, 4.0]

[model]
n = 1
resolution = [8]

[curvature]
alpha_over_2pi = [1.0]
"#;

fn run_tiny(dir: &std::path::Path) -> covmorse::harness::RunReport {
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let opts = RunOptions {
        out: Some(dir.to_path_buf()),
        ..Default::default()
    };
    run_experiment(&cfg, TINY, &opts).unwrap()
}

#[test]
fn config_errors_are_reported() {
    let bad = [
        TINY.replace("k_list = [1, 2]", "k_list = [2, 1]"),
        TINY.replace("q_list = [0, 1]", "q_list = [0, 3]"),
        TINY.replace("alpha_over_2pi = [1.0]", "alpha_over_2pi = [1.0]\nalpha = [6.0]"),
        TINY.replace("seed = 1", "seed = 1\nmystery = 2"),
        TINY.replace("resolution = [8]", "resolution = [8, 8, 8]"),
    ];
    for text in &bad {
        let res = ExperimentConfig::from_toml(text).and_then(|c| c.build_model().map(|_| c));
        assert!(matches!(res, Err(Error::Config(_))), "accepted:\n{text}");
    }
}

#[test]
fn tiny_run_writes_consistent_tables() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_tiny(dir.path());
    assert_eq!(report.harmonic.len(), 4);
    for h in &report.harmonic {
        let expect = if h.q == 0 { h.k as f64 } else { 0.0 };
        assert_eq!(h.gamma_dim, expect, "k={} q={}", h.k, h.q);
    }
    assert_eq!(report.verdicts.len(), 2);
    assert!(report.verdicts.iter().all(|v| v.all_hold()));

    let first_line = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first_line("counts.csv"), COUNTS_HEADER);
    assert_eq!(first_line("sandwich.csv"), SANDWICH_HEADER);
    assert_eq!(first_line("convergence.csv"), CONVERGENCE_HEADER);
    assert!(!dir.path().join("fibers.csv").exists());

    let s = check(dir.path()).unwrap();
    assert!(s.ok(), "{s:?}");
    assert_eq!(s.sandwich_rows, 2 * 2 * 2);
    assert_eq!(s.convergence_rows, 4);

    let before = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(table(dir.path()).unwrap(), before);
}

#[test]
fn convergence_columns() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_tiny(dir.path());
    let rows = convergence_table(&report).unwrap();
    for r in &rows {
        // weak bound coefficients for one flux quantum are (1, 0)
        let coeff = if r.q == 0 { 1.0 } else { 0.0 };
        assert!((r.bound_coeff - coeff).abs() < 1e-9);
        assert!((r.measured_over_kn - if r.q == 0 { 1.0 } else { 0.0 }).abs() < 1e-12);
        assert!((r.bound_coeff - r.measured_over_kn - r.slack_over_kn).abs() < 1e-9);
    }
    let keys: Vec<_> = rows.iter().map(|r| (r.q, r.k)).collect();
    assert_eq!(keys, vec![(0, 1), (0, 2), (1, 1), (1, 2)]);
}

#[test]
fn single_k_has_no_series() {
    let text = TINY.replace("k_list = [1, 2]", "k_list = [3]");
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let report = run_experiment(&cfg, &text, &opts).unwrap();
    assert!(report.asymptotic.is_none());
    assert!(matches!(convergence_table(&report), Err(Error::InsufficientSeries)));
}

#[test]
fn check_catches_tampering() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny(dir.path());
    let path = dir.path().join("sandwich.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // claim a count far above the upper bound while keeping upper_holds = true
    let mut cols: Vec<String> = lines[1].split(',').map(String::from).collect();
    cols[4] = "1000000".into();
    lines[1] = cols.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let s = check(dir.path()).unwrap();
    assert!(!s.ok());
    assert!(!s.inconsistencies.is_empty());

    fs::write(&path, "k,q,oops\n").unwrap();
    assert!(check(dir.path()).is_err());
}

#[test]
fn report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_tiny(dir.path());
    let back = load_report(dir.path()).unwrap();
    assert_eq!(back.harmonic, report.harmonic);
    assert_eq!(back.sandwich, report.sandwich);
    assert_eq!(back.provenance.config_hash, report.provenance.config_hash);
}
