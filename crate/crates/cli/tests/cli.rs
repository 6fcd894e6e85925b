//! End-to-end tests of the `ldp` binary: exit codes, output schemas, and
//! re-parseability of every emitted file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ldp")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ldp-cli-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

const OU_INSTANCE: &str = r#"
seed = 7

[instance]
family = "ou_linear"
x0 = 0.0
z0 = 0.0
"#;

#[test]
fn validate_ou_testbed_all_pass() {
    let dir = tmp_dir("validate");
    let cfg = write_config(
        &dir,
        "run.toml",
        &format!("{OU_INSTANCE}\n[experiment]\nkind = \"validate\"\n"),
    );
    let out = run(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap();
    for key in ["lipschitz_A_in_x", "lipschitz_B_in_x", "sup_A0_B0", "sigma_bounds", "verdicts"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    for v in ["a1", "a2", "a3"] {
        assert_eq!(report["verdicts"][v]["pass"], serde_json::Value::Bool(true));
    }
}

#[test]
fn strict_validate_fails_with_exit_2_on_bad_instance() {
    let dir = tmp_dir("strict");
    let cfg = write_config(
        &dir,
        "run.toml",
        r#"
[instance]
family = "ou_linear"
[instance.params]
kappa = -1.0

[experiment]
kind = "validate"
"#,
    );
    let out = run(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "--strict",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_config_names_the_offending_key() {
    let dir = tmp_dir("badcfg");
    let cfg = write_config(
        &dir,
        "run.toml",
        &format!("{OU_INSTANCE}\nnot_a_key = 3\n[experiment]\nkind = \"validate\"\n"),
    );
    let out = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not_a_key"), "diagnostic does not name the key: {err}");
}

#[test]
fn unknown_family_is_a_usage_error() {
    let dir = tmp_dir("badfam");
    let cfg = write_config(
        &dir,
        "run.toml",
        "[instance]\nfamily = \"nosuch\"\n\n[experiment]\nkind = \"validate\"\n",
    );
    let out = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nosuch"));
}

#[test]
fn subcommand_must_match_experiment_kind() {
    let dir = tmp_dir("mismatch");
    let cfg = write_config(
        &dir,
        "run.toml",
        &format!("{OU_INSTANCE}\n[experiment]\nkind = \"validate\"\n"),
    );
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_then_rate_round_trip() {
    let dir = tmp_dir("roundtrip");
    let out_dir = dir.join("out");
    let cfg = write_config(
        &dir,
        "sim.toml",
        &format!(
            "{OU_INSTANCE}\n[grids]\nt_horizon = 1.0\ndt = 1e-3\n\n\
             [experiment]\nkind = \"simulate\"\neps = 0.02\n"
        ),
    );
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Outputs re-parse through the tool's own readers.
    let path_csv = fs::read_to_string(out_dir.join("path.csv")).unwrap();
    let pp = ldp_core::simulate::PathPair::from_csv_str(&path_csv).unwrap();
    assert!((pp.horizon() - 1.0).abs() < 1e-12);
    let measure_csv = fs::read_to_string(out_dir.join("measure.csv")).unwrap();
    let m = ldp_core::occupation::GridMeasure::from_csv_str(&measure_csv).unwrap();
    assert!((m.total_mass() - 1.0).abs() < 1e-9);
    let density_csv = fs::read_to_string(out_dir.join("density.csv")).unwrap();
    ldp_core::invariant::DensityTable::from_csv_str(&density_csv).unwrap();

    // Determinism: byte-identical outputs on a second run.
    let out_dir2 = dir.join("out2");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for name in ["path.csv", "measure.csv", "density.csv"] {
        assert_eq!(
            fs::read(out_dir.join(name)).unwrap(),
            fs::read(out_dir2.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }

    // Feed the artifacts to the rate experiment.
    let rate_cfg = write_config(
        &dir,
        "rate.toml",
        &format!(
            "{OU_INSTANCE}\n[experiment]\nkind = \"rate\"\n\
             path_file = \"{}\"\nmeasure_file = \"{}\"\nbandwidth = 0.25\n",
            out_dir.join("path.csv").display(),
            out_dir.join("measure.csv").display()
        ),
    );
    let out = run(&[
        "rate",
        "--config",
        rate_cfg.to_str().unwrap(),
        "--out",
        dir.join("rateout").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rate: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("rateout/rate.json")).unwrap()).unwrap();
    for key in ["S_T", "F_T", "L_T", "quad_error", "infinite_reason"] {
        assert!(rate.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn tilted_estimate_without_beta_on_degenerate_instance_exits_3() {
    let dir = tmp_dir("degenerate");
    let cfg = write_config(
        &dir,
        "run.toml",
        r#"
seed = 3

[instance]
family = "ou_linear"
[instance.params]
b1 = 0.0

[grids]
dt = 0.01

[experiment]
kind = "estimate"
eps = 0.05
delta = 0.3
n = 50
method = "tilted"
target = "shifted"
theta = 1.0
"#,
    );
    let out = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beta"), "no regularization hint: {err}");
}

#[test]
fn crude_estimate_writes_parseable_csv() {
    let dir = tmp_dir("estimate");
    let cfg = write_config(
        &dir,
        "run.toml",
        &format!(
            "{OU_INSTANCE}\n[grids]\ndt = 0.01\n\n[experiment]\nkind = \"estimate\"\n\
             eps = 0.05\ndelta = 0.4\nn = 200\nmethod = \"crude\"\n"
        ),
    );
    let out = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("out/estimates.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "eps,delta,n,p_hat,stderr,log_p");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    let p_hat: f64 = row[3].parse().unwrap();
    assert!((0.0..=1.0).contains(&p_hat));
}

#[test]
fn hxy_reports_fields() {
    let dir = tmp_dir("hxy");
    let cfg = write_config(
        &dir,
        "run.toml",
        r#"
[instance]
family = "ou_linear"
[instance.params]
a1 = 1.0
a2 = 0.0
b1 = 0.0

[grids]
z_step = 2e-3

[experiment]
kind = "hxy"
y = 0.5
x = 0.0
"#,
    );
    let out = run(&[
        "hxy",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap();
    assert!(rep["H"].as_f64().unwrap() >= 0.0);
    assert!(rep.get("residual").is_some());
    assert!(rep.get("converged").is_some());
    assert!(rep.get("iterations").is_some());
}

#[test]
fn describe_lists_parameters() {
    let out = run(&["describe", "estimate"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["eps", "delta", "n", "method", "beta"] {
        assert!(text.contains(key), "describe estimate misses {key}");
    }

    let out = run(&["describe", "rate"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["path_file", "measure_file", "bandwidth", "beta"] {
        assert!(text.contains(key), "describe rate misses {key}");
    }

    let out = run(&["describe", "nosuch"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ergodic_experiment_writes_report() {
    let dir = tmp_dir("ergodic");
    let cfg = write_config(
        &dir,
        "run.toml",
        &format!(
            "{OU_INSTANCE}\n[grids]\ndt = 0.01\n\n[experiment]\nkind = \"ergodic\"\n\
             eps_list = [0.1, 0.05]\nn = 8\n"
        ),
    );
    let out = run(&[
        "ergodic",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(rep["eps_list"].as_array().unwrap().len(), 2);
    assert_eq!(rep["median_r"].as_array().unwrap().len(), 2);
    assert!(rep.get("verdict").is_some());
}

#[test]
fn legendre_experiment_consumes_simulated_artifacts() {
    let dir = tmp_dir("legendre");
    let out_dir = dir.join("sim");
    let sim_cfg = write_config(
        &dir,
        "sim.toml",
        &format!(
            "{OU_INSTANCE}\n[grids]\ndt = 1e-3\n\n[experiment]\nkind = \"simulate\"\neps = 0.05\n"
        ),
    );
    assert!(run(&[
        "simulate",
        "--config",
        sim_cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ])
    .status
    .success());
    let leg_cfg = write_config(
        &dir,
        "leg.toml",
        &format!(
            "{OU_INSTANCE}\n[experiment]\nkind = \"legendre\"\n\
             path_file = \"{}\"\nmeasure_file = \"{}\"\nbandwidth = 0.25\n",
            out_dir.join("path.csv").display(),
            out_dir.join("measure.csv").display()
        ),
    );
    let out = run(&[
        "legendre",
        "--config",
        leg_cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap();
    // The duality gap bound and the parabola vertex must both be reported.
    assert!(rep["s_check"]["gap"].as_f64().unwrap() <= rep["s_check"]["gap_bound"].as_f64().unwrap());
    let f = -8.0 * rep["f_check"]["target"].as_f64().unwrap();
    assert!(f >= 0.0);
    assert!(rep["f_check"]["vertex_gap"].as_f64().unwrap() <= 1e-6 * f.max(1.0));
}

#[test]
fn slope_experiment_writes_fit_and_rows() {
    let dir = tmp_dir("slope");
    let cfg = write_config(
        &dir,
        "run.toml",
        &format!(
            "{OU_INSTANCE}\n[grids]\ndt = 0.01\n\n[experiment]\nkind = \"slope\"\n\
             eps_list = [0.2, 0.1, 0.05]\ndelta = 0.5\nn = 400\nmethod = \"crude\"\n\
             rate_ref = 0.1\n"
        ),
    );
    let out = run(&[
        "slope",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("out/estimates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4); // header + three eps rows
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/slope.json")).unwrap()).unwrap();
    assert!(fit["slope"].as_f64().unwrap().is_finite());
    assert_eq!(fit["rate_ref"].as_f64().unwrap(), 0.1);
}

#[test]
fn zero_hit_slope_exits_3() {
    let dir = tmp_dir("zerohits");
    let cfg = write_config(
        &dir,
        "run.toml",
        &format!(
            "{OU_INSTANCE}\n[grids]\ndt = 0.01\n\n[experiment]\nkind = \"slope\"\n\
             eps_list = [0.2, 0.1, 0.05]\ndelta = 0.0\nn = 50\nmethod = \"crude\"\n"
        ),
    );
    let out = run(&[
        "slope",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
