use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mlsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlsa"))
        .args(args)
        .output()
        .unwrap()
}

fn option_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/option_paper.cfg")
}

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("test.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = r#"
seed = 11
replications = 4
epsilons = ["1/8", "1/16", "1/32"]
init = "truth"

[model]
kind = "option"
delta = 0.5
alpha = 0.975

[bias_study]
h = ["1/4", "1/8"]
iterations = 2000
gamma1 = 1.0
offset = 100

[[schedule]]
algorithm = "sa"
target = "var"
gamma1 = 1.0
offset = 100

[[schedule]]
algorithm = "sa"
target = "es"
gamma1 = 1.0
offset = 100

[[schedule]]
algorithm = "nsa"
target = "var"
gamma1 = 1.0
offset = 100

[[schedule]]
algorithm = "nsa"
target = "es"
gamma1 = 1.0
offset = 100

[[schedule]]
algorithm = "mlsa"
target = "var"
h0 = "1/4"
gamma1 = 1.0
offset = 100

[[schedule]]
algorithm = "mlsa"
target = "es"
h0 = "1/4"
gamma1 = 1.0
offset = 100
"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn estimate_prints_pair_and_cost() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let o = mlsa(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--algo",
        "nsa",
        "--eps",
        "1/16",
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("VaR"));
    assert!(text.contains("ES"));
    // K = 16 inner draws for each of 256 iterations.
    assert!(text.contains("cost       4096"), "{text}");
}

#[test]
fn tune_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mlsa(&[
        "tune",
        "--config",
        option_cfg().to_str().unwrap(),
        "--algo",
        "mlsa",
        "--target",
        "var",
        "--eps",
        "1/32",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("level"));
    assert!(text.contains("1269"));
    let csv = std::fs::read_to_string(out.join("tune.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "algorithm,target,epsilon,level,h,iterations,cost,cost_share"
    );
    assert!(lines[1].starts_with("mlsa,var,0.03125,0,0.0625,1269,"));
    assert!(lines[2].starts_with("mlsa,var,0.03125,1,0.03125,765,"));
}

#[test]
fn compare_writes_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    let o = mlsa(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "algorithm,target,epsilon,rmse,mean_runtime_s,mean_cost,replications"
    );
    assert_eq!(lines.count(), 18);
    assert!(out.join("slopes.csv").exists());
    assert!(out.join("report.txt").exists());
    let nsa_cost = csv
        .lines()
        .find(|l| l.starts_with("nsa,var,0.0625,"))
        .unwrap()
        .split(',')
        .nth(5)
        .unwrap()
        .to_string();
    assert_eq!(nsa_cost, "4096");
}

#[test]
fn seed_flag_changes_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = mlsa(&[
            "compare",
            "--config",
            cfg.to_str().unwrap(),
            "--algo",
            "sa",
            "--seed",
            seed,
            "--no-timing",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
        csv.lines()
            .map(|l| l.split(',').nth(3).unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "a"), run("2", "c"));
}

#[test]
fn bias_study_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let out = dir.path().join("bias");
    let o = mlsa(&[
        "bias-study",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(out.join("bias_study.csv")).unwrap();
    assert!(csv.starts_with("h,mean_xi_error,mean_chi_error,rescaled_xi_error,rescaled_chi_error"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mlsa(&["compare"]).status.code(), Some(2));
    assert_eq!(
        mlsa(&["compare", "--config", "/nonexistent.cfg"])
            .status
            .code(),
        Some(2)
    );
    let bad = write_cfg(
        dir.path(),
        &SMALL.replace(r#"epsilons = ["1/8", "1/16", "1/32"]"#, "epsilons = []"),
    );
    let o = mlsa(&["compare", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    let cfg = write_cfg(dir.path(), SMALL);
    let o = mlsa(&["tune", "--config", cfg.to_str().unwrap(), "--eps", "1/2"]);
    assert_eq!(o.status.code(), Some(2), "h0 = 1/4 does not exceed eps");
    assert_eq!(mlsa(&["compare", "--algo", "gd"]).status.code(), Some(2));
}

#[test]
fn divergent_cell_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replacen("gamma1 = 1.0\noffset = 100", "gamma1 = 1e10\noffset = 0", 2);
    let cfg = write_cfg(dir.path(), &text);
    let out = dir.path().join("div");
    let o = mlsa(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--algo",
        "sa",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(stdout(&o).contains("divergence-dominated"));
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("sa,var,0.125,NA,NA,0,0"));
}
