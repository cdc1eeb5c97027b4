use std::path::Path;
use std::process::{Command, Output};

use qdep::cli::{resolve_with_env, Cli, Command as Cmd, ConfigError, SigmaSetting};
use clap::Parser;

fn qdep(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdep"))
        .args(args)
        .current_dir(dir)
        .env_remove("QDEP_WORKERS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn resolve(args: &[&str]) -> Result<qdep::cli::RunConfig, ConfigError> {
    let mut argv = vec!["qdep"];
    argv.extend_from_slice(args);
    resolve_with_env(Cli::try_parse_from(argv).unwrap(), None)
}

fn write_csv(path: &Path, rows: impl Iterator<Item = (f64, f64)>) {
    let mut s = String::from("x,y\n");
    for (a, b) in rows {
        s.push_str(&format!("{a},{b}\n"));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn happy_path_resolves() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_csv(&input, (0..10).map(|i| (i as f64, (i * i) as f64)));
    let c = resolve(&["test", "--input", input.to_str().unwrap(), "--kernel", "gaussian", "--h", "1.0", "--alpha", "0.05"])
        .unwrap();
    assert_eq!(c.command, Cmd::Test);
    assert_eq!(c.h, 1.0);
    assert_eq!(c.alpha, 0.05);
    assert_eq!(c.sigma, SigmaSetting::SampleSd);
}

#[test]
fn invalid_values_name_their_flag() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_csv(&input, (0..10).map(|i| (i as f64, 1.0 + i as f64)));
    let inp = input.to_str().unwrap();
    let e = resolve(&["test", "--input", inp, "--h", "-1"]).unwrap_err();
    assert_eq!(e.flag, "h");
    assert!(e.to_string().contains("h must be positive"));
    assert_eq!(resolve(&["test", "--input", inp, "--alpha", "1"]).unwrap_err().flag, "alpha");
    assert_eq!(resolve(&["test", "--input", "missing.csv"]).unwrap_err().flag, "input");
    assert_eq!(resolve(&["test"]).unwrap_err().flag, "input");
    assert_eq!(resolve(&["test", "--input", inp, "--kernel", "box"]).unwrap_err().flag, "kernel");
    assert_eq!(resolve(&["test", "--input", inp, "--sigma", "1,-2"]).unwrap_err().flag, "sigma");
    assert_eq!(resolve(&["sweep"]).unwrap_err().flag, "scenario");
    assert_eq!(
        resolve(&["nulllaw", "--scenario", "bivariate-gaussian:rho=0.5"]).unwrap_err().flag,
        "scenario"
    );
    assert_eq!(resolve(&["simulate", "--scenario", "bivariate-gaussian:rho=2"]).unwrap_err().flag, "scenario");
    assert_eq!(
        resolve(&["sweep", "--scenario", "bivariate-gaussian:rho=0", "--replicates", "50"]).unwrap_err().flag,
        "replicates"
    );

    let out = qdep(&["test", "--input", inp, "--h", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--h"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "h = 1.0\nalpha = 0.1\nscenario = \"copy-plus-noise:noise_sd=0.5,k=3\"\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let c = resolve(&["simulate", "--config", cfg, "--h", "2"]).unwrap();
    assert_eq!(c.h, 2.0);
    assert_eq!(c.alpha, 0.1);
    assert_eq!(c.scenario.unwrap().k(), 3);

    let out = qdep(&["simulate", "--config", cfg, "--h", "2", "--print-config"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["h"], 2.0);
    assert_eq!(json["scenario"]["kind"], "copy-plus-noise");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "bandwidth = 1.0\n").unwrap();
    let e = resolve(&["oracle-check", "--config", cfg.to_str().unwrap()]).unwrap_err();
    assert_eq!(e.flag, "config");
    assert!(e.message.contains("bandwidth"));
}

#[test]
fn workers_default_from_environment() {
    let parse = |args: &[&str], env: Option<&str>| {
        let mut argv = vec!["qdep", "oracle-check"];
        argv.extend_from_slice(args);
        resolve_with_env(Cli::try_parse_from(argv).unwrap(), env.map(String::from))
    };
    assert_eq!(parse(&[], None).unwrap().workers, 1);
    assert_eq!(parse(&[], Some("4")).unwrap().workers, 4);
    assert_eq!(parse(&["--workers", "2"], Some("4")).unwrap().workers, 2);
    assert_eq!(parse(&[], Some("many")).unwrap_err().flag, "workers");
}

#[test]
fn duplicated_column_is_rejected_with_status_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("dup.csv");
    write_csv(&input, (0..200).map(|i| ((i as f64 * 0.7).sin(), (i as f64 * 0.7).sin())));
    let out = qdep(&["test", "--input", "dup.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["reject"], true);
    for key in ["q_hat", "term1", "term2", "term3", "e1", "v1", "gamma", "beta", "q_alpha", "p_value", "config_hash"] {
        assert!(!report[key].is_null(), "{key}");
    }
}

#[test]
fn independent_samples_mostly_pass() {
    let dir = tempfile::tempdir().unwrap();
    let mut passed = 0;
    for seed in 0..20 {
        let s = seed.to_string();
        let out = qdep(
            &["simulate", "--scenario", "bivariate-gaussian:rho=0", "--n", "500", "--seed", &s, "--output", "ind.csv"],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0));
        let out = qdep(&["test", "--input", "ind.csv", "--alpha", "0.05"], dir.path());
        match out.status.code() {
            Some(0) => passed += 1,
            Some(3) => {}
            other => panic!("unexpected status {other:?}: {}", stderr(&out)),
        }
    }
    // 19 expected; 16 or more happens with probability above 0.98.
    assert!(passed >= 16, "{passed}");
}

#[test]
fn bad_cell_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("x,y\n");
    for i in 0..10 {
        text.push_str(if i == 5 { "0.5,oops\n" } else { "0.5,1.5\n" });
    }
    std::fs::write(dir.path().join("bad.csv"), text).unwrap();
    let out = qdep(&["test", "--input", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 7"), "{}", stderr(&out));
}

#[test]
fn constant_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "alpha,beta\n1,2\n2,2\n3,2\n").unwrap();
    let out = qdep(&["test", "--input", "c.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("'beta'"), "{}", stderr(&out));
    let out = qdep(&["test", "--input", "c.csv", "--sigma", "1,1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--calibration permutation"), "{}", stderr(&out));
}

#[test]
fn simulate_is_reproducible_and_feeds_test() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        ["simulate", "--scenario", "bivariate-gaussian:rho=0.5", "--n", "1000", "--seed", "7", "--output", out]
    };
    assert_eq!(qdep(&args("a.csv"), dir.path()).status.code(), Some(0));
    assert_eq!(qdep(&args("b.csv"), dir.path()).status.code(), Some(0));
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let out = qdep(&["test", "--input", "a.csv", "--format", "csv", "--output", "r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.starts_with("version,seed,config_hash"));
}

#[test]
fn power_bound_needs_and_uses_alt_q() {
    let dir = tempfile::tempdir().unwrap();
    qdep(&["simulate", "--scenario", "copy-plus-noise:noise_sd=1", "--n", "300", "--output", "d.csv"], dir.path());
    let out = qdep(&["test", "--input", "d.csv", "--alt-q", "0.05", "--bound", "chebyshev"], dir.path());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = report["power_lower_bound"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&b));
    assert!(report["var_leading"].as_f64().unwrap() > 0.0);
}

#[test]
fn permutation_calibration_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    qdep(&["simulate", "--scenario", "rotated-uniform:angle=0.6", "--n", "120", "--output", "d.csv"], dir.path());
    let run = || {
        let out = qdep(
            &["test", "--input", "d.csv", "--calibration", "permutation", "--resamples", "99", "--seed", "3"],
            dir.path(),
        );
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a["p_value"], b["p_value"]);
    assert_eq!(a["resamples"], 99);
}

#[test]
fn oracle_check_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = qdep(&["oracle-check", "--output", "oc.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oc.json")).unwrap()).unwrap();
    assert!(report["max_diff_naive"].as_f64().unwrap() < 1e-12);
    assert!(report["max_diff_cf"].as_f64().unwrap() < 1e-5);
    assert_eq!(report["rows"].as_array().unwrap().len(), 50);
}

#[test]
fn sweep_and_nulllaw_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = qdep(
        &[
            "sweep", "--scenario", "copy-plus-noise:noise_sd=2", "--h-grid", "0.5,1,2", "--n-grid", "30,60",
            "--replicates", "100", "--workers", "2", "--output", "sw.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("sw.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let out = qdep(
        &[
            "nulllaw", "--scenario", "product:marginals=normal;exponential(1)", "--n", "60", "--replicates", "200",
            "--output", "nl.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("nl.json")).unwrap()).unwrap();
    assert!(report["ks"].as_f64().unwrap() < 1.0);
    assert!(report["seed"].is_u64());
    let qq = std::fs::read_to_string(dir.path().join("nl.qq.csv")).unwrap();
    assert!(qq.starts_with("theoretical,empirical"));
    assert_eq!(qq.lines().count(), 201);
}

#[test]
fn discrete_scenario_from_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("law.json"),
        r#"{"atoms": [[0, 0], [0, 1], [1, 0], [1, 1]], "probs": [0.4, 0.1, 0.1, 0.4]}"#,
    )
    .unwrap();
    let out = qdep(
        &["simulate", "--scenario", "discrete:path=law.json", "--n", "50", "--output", "d.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);
    let out = qdep(&["simulate", "--scenario", "discrete:path=nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--scenario"));
}
