use std::fs;
use std::path::Path;
use std::process::Command;

use dam_lab::cli::{cli_dispatch, OUT_ENV};
use dam_lab::csv_out::read_csv;

fn dispatch(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("damlab").chain(args.iter().copied());
    let code = cli_dispatch(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gate_demo_counts_eighty_of_one_hundred() {
    let (code, out, _) = dispatch(&["gate-demo", "--n", "100", "--k", "10", "--alpha", "1", "--beta", "-2"]);
    assert_eq!(code, 0);
    assert!(out.lines().last().unwrap().starts_with("80 active of 100"), "{out}");
    assert_eq!(out.lines().count(), 102);
}

#[test]
fn gate_demo_rejects_bad_domain_as_config_error() {
    let (code, _, err) = dispatch(&["gate-demo", "--n", "10", "--k", "0"]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let (code, _, err) = dispatch(&[]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, err) = dispatch(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
    let (code, out, _) = dispatch(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("gate-demo"));
}

#[test]
fn config_errors_exit_one_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = write_config(dir.path(), "bad.json", r#"{"kind":"train-dr","psi":"linear","lr":-1}"#);
    let (code, _, err) = dispatch(&["train-dr", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("`lr`"), "{err}");
    assert!(!out.exists());

    let unknown = write_config(dir.path(), "unknown.json", r#"{"kind":"train-dr","dataset":{"path":"x"}}"#);
    let (code, _, err) = dispatch(&["train-dr", "--config", &unknown]);
    assert_eq!(code, 1);
    assert!(err.contains("dataset"), "{err}");

    let wrong = write_config(dir.path(), "wrong.json", r#"{"kind":"sweep"}"#);
    let (code, _, err) = dispatch(&["train-dr", "--config", &wrong]);
    assert_eq!(code, 1);
    assert!(err.contains("kind"), "{err}");

    let missing = dir.path().join("missing.json");
    let (code, _, _) = dispatch(&["train-dr", "--config", missing.to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"kind":"train-classifier","dataset":{{"mnist_dir":"{}"}}}}"#,
            dir.path().join("nowhere").display()
        ),
    );
    let (code, _, err) = dispatch(&["train-classifier", "--config", &cfg]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn train_dr_linear_rank_five_ends_at_five() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", r#"{"kind":"train-dr","psi":"linear","r":5,"seed":0}"#);
    let out = dir.path().join("run");
    let (code, stdout, err) = dispatch(&["train-dr", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("trace.csv"));
    let (header, rows) = read_csv(&out.join("trace.csv")).unwrap();
    assert_eq!(rows.len(), 2000);
    let col = header.iter().position(|h| h == "l0_exact_0").unwrap();
    assert_eq!(rows.last().unwrap()[col], "5");
    let (header, rows) = read_csv(&out.join("summary.csv")).unwrap();
    let inside = header.iter().position(|h| h == "beta_in_interval").unwrap();
    assert_eq!(rows[0][inside], "1");
}

fn run_binary(args: &[&str], out_env: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_damlab"));
    cmd.args(args).env_remove(OUT_ENV);
    if let Some(p) = out_env {
        cmd.env(OUT_ENV, p);
    }
    cmd.output().unwrap()
}

#[test]
fn same_config_and_seed_give_byte_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"kind":"train-classifier","widths":[784,24,16,10],"epochs":3,"cold_start_epochs":1,
            "dataset":{"synthetic":true,"train_subset":300,"test_subset":100}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = run_binary(&["train-classifier", "--config", &cfg, "--seed", "7", "--out", d.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["trace.csv", "report.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn environment_overrides_config_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{"kind":"gen-data","psi":"quadratic","r":2,"n_samples":20,"output_dir":"{}"}}"#,
            dir.path().join("from_config").display()
        ),
    );
    let env_dir = dir.path().join("from_env");
    let o = run_binary(&["gen-data", "--config", &cfg], Some(&env_dir));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(env_dir.join("data.csv").exists());
    assert!(!dir.path().join("from_config").exists());

    let (header, rows) = read_csv(&env_dir.join("data.csv")).unwrap();
    assert_eq!(header.len(), 1 + 12);
    assert_eq!(rows.len(), 20);
    let (header, _) = read_csv(&env_dir.join("latent.csv")).unwrap();
    assert_eq!(header.len(), 1 + 2);
}

#[test]
fn sweep_and_ablation_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = write_config(
        dir.path(),
        "s.json",
        r#"{"kind":"sweep","psi":"linear","r":2,"n_samples":50,"epochs":5,
            "grid":{"lrs":[0.01,0.1],"lambdas":[0.01],"beta0s":[1,5]}}"#,
    );
    let out = dir.path().join("s");
    let (code, _, err) = dispatch(&["sweep", "--config", &sweep, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let (_, rows) = read_csv(&out.join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 4);

    let abl = write_config(
        dir.path(),
        "a.json",
        r#"{"kind":"mnist-ablation","widths":[784,16,8],"epochs":1,"lambdas":[0.1,1],
            "dataset":{"synthetic":true,"train_subset":64,"test_subset":10}}"#,
    );
    let out = dir.path().join("a");
    let (code, _, err) = dispatch(&["mnist-ablation", "--config", &abl, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let (header, rows) = read_csv(&out.join("ablation.csv")).unwrap();
    assert_eq!(header, ["method", "lambda", "dimension", "reconstruction_loss"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn analyze_writes_cka_for_both_networks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind":"analyze","widths":[784,16,10],"epochs":2,"cold_start_epochs":0,"lambda":0.4,
            "dataset":{"synthetic":true,"train_subset":200,"test_subset":60}}"#,
    );
    let out = dir.path().join("c");
    let (code, _, err) = dispatch(&["analyze", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for name in ["cka_unpruned.csv", "cka_pruned.csv", "cka_summary.csv", "reports.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let (_, rows) = read_csv(&out.join("cka_summary.csv")).unwrap();
    assert_eq!(rows.len(), 2);
}
