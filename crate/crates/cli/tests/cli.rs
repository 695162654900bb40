use std::path::Path;
use std::process::{Command, Output};

fn prefbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefbo"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn schedule_prints_round_lengths_and_ends() {
    let text = stdout(&prefbo(&["schedule", "--T", "300"]));
    assert!(text.contains("N_r: 18 74 149 59"), "{text}");
    assert!(text.contains("t_r: 18 92 241 300"), "{text}");
    assert!(text.contains("R: 4"), "{text}");
    let text = stdout(&prefbo(&["schedule", "--T", "4"]));
    assert!(text.contains("N_r: 2 2"), "{text}");
}

#[test]
fn schedule_rejects_horizon_below_two() {
    let out = prefbo(&["schedule", "--T", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--T"));
}

fn gamma(args: &[&str]) -> f64 {
    let mut all = vec!["infogain"];
    all.extend_from_slice(args);
    stdout(&prefbo(&all)).trim().parse().unwrap()
}

#[test]
fn infogain_is_zero_without_queries_and_larger_for_rougher_kernels() {
    assert_eq!(gamma(&["--T", "0"]), 0.0);
    let se = gamma(&["--kernel", "se", "--grid", "50", "--T", "200"]);
    let m15 = gamma(&["--kernel", "matern15", "--grid", "50", "--T", "200"]);
    assert!(se > 0.0 && se < m15, "se {se}, matern15 {m15}");
}

fn summary_mean(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    text.lines().last().unwrap().to_string()
}

#[test]
fn run_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let text = stdout(&prefbo(&[
        "run",
        "--T",
        "20",
        "--runs",
        "3",
        "--grid",
        "30",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(text.contains("mrlpf T=20 runs=3"), "{text}");
    for i in 0..3 {
        let trace = std::fs::read_to_string(out.join(format!("trace_run{i}.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 21);
    }
    assert!(out.join("summary.csv").is_file());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "algo = \"maxminlcb\"\nT = 12\nruns = 2\ngrid = 20\nbeta = 0.5\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let text = stdout(&prefbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]));
    assert!(text.contains("maxminlcb T=12 runs=2"), "{text}");

    let b = dir.path().join("b");
    let text = stdout(&prefbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--algo",
        "mrlpf",
        "--T",
        "15",
        "--out",
        b.to_str().unwrap(),
    ]));
    assert!(text.contains("mrlpf T=15 runs=2"), "{text}");
    assert_ne!(summary_mean(&a), summary_mean(&b));
}

#[test]
fn bad_settings_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "horizn = 10\n").unwrap();
    let out = prefbo(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));

    let out = prefbo(&["run", "--env", "embedding", "--T", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dataset"));
}
