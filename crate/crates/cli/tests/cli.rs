use std::path::Path;
use std::process::{Command, Output};

use nsdde_cli::{parse_config, ConfigArgs};

fn nsdde(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsdde"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env_remove("NSDDE_SEED")
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulate_writes_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsdde(
        &["simulate", "--problem", "cubic-tamed", "--scheme", "tamed-milstein", "--m-exp", "6", "--paths", "1", "--seed", "7"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("path.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,y_0");
    // T = 4, Δ = 1/64
    assert_eq!(lines.len() - 1, 1 + 256);
    assert!(lines[1].starts_with("0,1.0000000000000000"));
    assert!(lines.last().unwrap().starts_with("4.0000000000000000,"));
    assert!(dir.path().join("path.manifest.toml").exists());
}

#[test]
fn simulate_several_paths_in_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsdde(&["simulate", "--problem", "linear-sdde", "--m-exp", "3", "--paths", "3"], dir.path());
    assert!(out.status.success());
    let text = read(&dir.path().join("path.csv"));
    assert!(text.starts_with("path,t,y_0\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 33);
}

#[test]
fn convergence_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["convergence", "--problem", "linear-sdde", "--schemes", "em,milstein,tamed-milstein", "--m-exps", "2..4", "--ref-exp", "7", "--paths", "40"];
    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let sub = dir.path().join(tag);
        let out = nsdde(&args, &sub);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(std::fs::read(sub.join("conv.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs.remove(0)).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.starts_with("scheme,dt,paths,p,error,stderr,exploded_fraction\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn report_headers() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--problem", "cubic-tamed", "--m-exps", "2..3", "--ref-exp", "6", "--paths", "20"];
    for (cmd, file, header) in [
        ("moments", "moments.csv", "scheme,dt,p,sup_moment,stderr,exploded_fraction"),
        ("gap", "gap.csv", "dt,p,gap,stderr"),
        ("exit-prob", "exit.csv", "which,R,prob,scaled"),
    ] {
        let mut args = vec![cmd];
        args.extend(common);
        let out = nsdde(&args, dir.path());
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let text = read(&dir.path().join(file));
        assert_eq!(text.lines().next().unwrap(), header, "{cmd}");
    }
    let exit = read(&dir.path().join("exit.csv"));
    assert_eq!(exit.lines().filter(|l| l.starts_with("tau_R,")).count(), 4);
    assert_eq!(exit.lines().filter(|l| l.starts_with("rho_R,")).count(), 4);
}

#[test]
fn check_reports_contraction_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsdde(&["check", "--problem", "cubic-tamed", "--radius", "10", "--assert"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("assumptions.csv"));
    assert!(text.starts_with("quantity,R,dt,value\n"));
    let row = text.lines().find(|l| l.starts_with("kappa_hat,")).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[1].parse::<f64>().unwrap(), 10.0);
    assert!((cols[3].parse::<f64>().unwrap() - 0.25).abs() < 1e-12, "{row}");
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["convergence", "--problem", "linear-sdde", "--ref-exp", "5", "--m-exps", "3..8"],
        vec!["convergence", "--problem", "linear-sdde", "--alpha", "0.7"],
        vec!["convergence", "--problem", "linear-sdde", "--schemes", "rk4"],
        vec!["convergence", "--problem", "nope"],
        vec!["convergence", "--paths", "0"],
        vec!["convergence", "--paths", "many"],
    ] {
        let out = nsdde(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!dir.path().join("conv.csv").exists());
}

#[test]
fn missed_threshold_exits_with_three_only_under_assert() {
    let dir = tempfile::tempdir().unwrap();
    // K1_hat grows tenfold between R = 10 and R = 100 on this problem.
    let args = ["check", "--problem", "cubic-tamed", "--radii", "1,100", "--samples", "5000"];
    let plain = nsdde(&args, dir.path());
    assert_eq!(plain.status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--assert");
    let out = nsdde(&strict, dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("assumptions.csv").exists());
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = nsdde(
        &["gap", "--problem", "linear-sdde", "--m-exps", "2..3", "--ref-exp", "6", "--paths", "30", "--seed", "123", "--p", "3"],
        &first,
    );
    assert!(out.status.success());
    let manifest = first.join("gap.manifest.toml");
    let text = read(&manifest);
    assert!(text.contains("tool_version = \"0.1.0\""));
    assert!(text.contains("command = \"gap\""));

    let cfg = parse_config(&ConfigArgs { config: Some(manifest.clone()), ..Default::default() }).unwrap();
    assert_eq!(cfg.seed, 123);
    assert_eq!(cfg.p, 3.0);
    assert_eq!(cfg.m_exponents, 2..=3);
    assert_eq!(cfg.output_dir, first);

    let second = dir.path().join("second");
    let rerun = nsdde(&["gap", "--config", manifest.to_str().unwrap()], &second);
    assert!(rerun.status.success(), "{}", String::from_utf8_lossy(&rerun.stderr));
    assert_eq!(std::fs::read(first.join("gap.csv")).unwrap(), std::fs::read(second.join("gap.csv")).unwrap());
}

#[test]
fn seed_environment_only_replaces_default() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, env: Option<&str>, extra: &[&str]| {
        let sub = dir.path().join(tag);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nsdde"));
        cmd.args(["simulate", "--problem", "linear-sdde", "--m-exp", "3", "--paths", "1"]).args(extra);
        cmd.arg("--output-dir").arg(&sub).env_remove("NSDDE_SEED");
        if let Some(v) = env {
            cmd.env("NSDDE_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(sub.join("path.csv")).unwrap()
    };
    let default = run("default", None, &[]);
    let explicit42 = run("explicit", None, &["--seed", "42"]);
    let env9 = run("env9", Some("9"), &[]);
    let flag9 = run("flag9", None, &["--seed", "9"]);
    let env_and_flag = run("both", Some("9"), &["--seed", "42"]);
    assert_eq!(default, explicit42);
    assert_eq!(env9, flag9);
    assert_ne!(default, env9);
    assert_eq!(env_and_flag, default);
}
