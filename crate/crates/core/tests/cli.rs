use std::fs;

use skewprod::cli::{execute, run, Command, FieldSource, RunConfig};

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("skewprod")
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

#[test]
fn missing_field_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = run(argv(&[
        "solve",
        "--field",
        "/does/not/exist.jsonl",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 2);
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(run(argv(&["solve", "--set", "nonsense"])), 2);
    assert_eq!(run(argv(&["solve", "--set", "k=0"])), 2);
    assert_eq!(run(argv(&["unknown"])), 2);
}

#[test]
fn domain_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    // 2 lambda0 = 1 is an exact c-divisor resonance at nu = (-1, 0).
    assert_eq!(run(argv(&["solve", "--lambda0", "0.5", "--out", &out])), 1);
}

#[test]
fn zero_field_gives_zero_series() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("zero.jsonl");
    fs::write(&field, "").unwrap();
    let cfg = RunConfig {
        field: FieldSource::File(field),
        out_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    let out = execute(Command::Solve, &cfg).unwrap();
    assert!(out.passed());
    assert!(out.notes.iter().any(|n| n.contains("trivial")));
    let jl = fs::read_to_string(cfg.out_dir.join("coefficients.jsonl")).unwrap();
    for line in jl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["re"].as_f64().unwrap(), 0.0);
        assert_eq!(v["im"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn all_on_shipped_fixture_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let field = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/golden_sparse.jsonl");
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, format!("field = {field}\nT = 10\n")).unwrap();
    let out = dir.path().join("out");
    let code = run(argv(&[
        "all",
        "--config",
        cfg_path.to_str().unwrap(),
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    for f in [
        "bryuno.csv",
        "coefficients.jsonl",
        "solve_summary.csv",
        "trees.csv",
        "renorm_table.csv",
        "renorm_symmetry.csv",
        "renorm_cancellation.csv",
        "renorm_counting.csv",
        "renorm_shift.csv",
        "verify.csv",
        "scan.csv",
        "scan_summary.json",
        "checks.csv",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let bryuno = fs::read_to_string(out.join("bryuno.csv")).unwrap();
    assert!(bryuno.starts_with("n,alpha_n,gamma_n,partial_bryuno_sum\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("scan_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["grid_size"], 10000);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for jobs in [1, 3] {
        let cfg = RunConfig {
            field: FieldSource::Rich,
            jobs: Some(jobs),
            out_dir: dir.path().join(format!("j{jobs}")),
            ..RunConfig::default()
        };
        execute(Command::Trees { dot: None }, &cfg).unwrap();
        outs.push(fs::read_to_string(cfg.out_dir.join("trees.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}
