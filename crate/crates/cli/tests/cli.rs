use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use exprec_cli::commands::{cmd_recon, cmd_simulate, Context};
use exprec_cli::pgm;
use exprec_cli::{ExperimentConfig, Method};
use exprec_core::ktcore::{read_array, ArrayData, Dtype};

fn exprec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exprec"))
        .args(args)
        .env("EXPREC_THREADS", "1")
        .output()
        .unwrap()
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

const SMALL: &str = r#"{
    "grid": {"p": 12, "q": 12, "t": 6, "dt_ms": 10},
    "phantom": {"kind": "regions_smoothed", "t2_ms": [95, 70, 180, 130], "bandwidth": 2},
    "coils": 2,
    "mask": {"kind": "uniform_random", "fraction": 0.5},
    "noise": {"sigma": 0.01, "relative": true},
    "filter": {"n1": 9, "n2": 9, "nt": 2},
    "solver": {"p": 0.6, "lambda": 1e6, "outer_iters": 3},
    "ktlr": {"mu": 0.3, "iters": 20},
    "seed": 4
}"#;

fn config_file(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn presets_parse() {
    for name in ["fig5_desk.json", "fig6_desk.json"] {
        let cfg = ExperimentConfig::load(&preset(name)).unwrap();
        assert_eq!((cfg.grid.p, cfg.grid.q, cfg.grid.t), (64, 64, 12));
    }
}

#[test]
fn fig5_preset_simulates_five_arrays_with_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = exprec(&["simulate", "--config", preset("fig5_desk.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let hash = ExperimentConfig::load(&preset("fig5_desk.json")).unwrap().hash();
    let expected = [
        ("phantom.ktar", Dtype::C128, vec![64, 64, 12]),
        ("t2_true.ktar", Dtype::F64, vec![1, 64, 64]),
        ("coils.ktar", Dtype::C128, vec![1, 64, 64]),
        ("mask.ktar", Dtype::F32, vec![64, 64, 12]),
        ("meas.ktar", Dtype::C128, vec![1, 64, 64, 12]),
    ];
    for (name, dtype, shape) in expected {
        let (header, _) = read_array(out.join(name)).unwrap();
        assert_eq!(header.dtype, dtype, "{name}");
        assert_eq!(header.shape, shape, "{name}");
        assert_eq!(header.config_hash.as_deref(), Some(hash.as_str()), "{name}");
    }
    let ArrayData::F32(mask) = read_array(out.join("mask.ktar")).unwrap().1 else {
        panic!("mask is not f32");
    };
    let frame0 = (0..64 * 64).filter(|i| mask[i * 12] == 1.0).count();
    assert_eq!(frame0, (0.3f64 * 4096.0).round() as usize);
}

#[test]
fn repeated_seed_gives_identical_files_and_a_new_seed_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), SMALL);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let res = exprec(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(res.status.success());
        std::fs::read(out.join("meas.ktar")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn invalid_configs_exit_65_with_the_offending_path() {
    let dir = tempfile::tempdir().unwrap();
    for (body, needle) in [
        (SMALL.replace("\"fraction\": 0.5", "\"fraction\": 0"), "at /mask:"),
        (SMALL.replace("\"coils\": 2", "\"coils\": 2, \"colis\": 1"), "at /colis: unknown field `colis`"),
        (SMALL.replace("\"bandwidth\": 2", "\"bandwidth\": -2"), "at /phantom: invalid value: integer `-2`"),
        (SMALL.replace("\"n1\": 9", "\"n1\": 13"), "at /filter:"),
    ] {
        let cfg = config_file(dir.path(), &body);
        let res = exprec(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
        let err = String::from_utf8_lossy(&res.stderr);
        assert_eq!(res.status.code(), Some(65), "{err}");
        assert!(err.contains(needle), "{needle}: {err}");
    }
}

#[test]
fn usage_errors_exit_64_and_help_exits_0() {
    let res = exprec(&["recon", "--config", "x.json", "--method", "magic"]);
    assert_eq!(res.status.code(), Some(64));
    assert_eq!(exprec(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(exprec(&["--help"]).status.code(), Some(0));
    assert_eq!(exprec(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_65() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), SMALL);
    let out = dir.path().join("empty");
    let res = exprec(&["recon", "--config", &cfg, "--out", out.to_str().unwrap(), "--method", "zerofill"]);
    assert_eq!(res.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing input"));
}

#[test]
fn inputs_from_another_config_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = config_file(dir.path(), SMALL);
    assert!(exprec(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let res = exprec(&["recon", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "99", "--method", "zerofill"]);
    assert_eq!(res.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&res.stderr).contains("different config"));
}

#[test]
fn iteration_cap_exits_2_and_still_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), SMALL);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    assert!(exprec(&["simulate", "--config", &cfg, "--out", out_s]).status.success());
    let res = exprec(&["recon", "--config", &cfg, "--out", out_s, "--method", "proposed", "--threads", "1"]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    let report = std::fs::read_to_string(out.join("report_proposed.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("iter,eps,objective,data_term,reg_term,cg_iters,seconds,config_hash"));
    assert_eq!(lines.count(), 3);
    assert!(out.join("recon_proposed.ktar").is_file());
}

#[test]
fn zerofill_is_fast_at_desk_scale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&preset("fig5_desk.json")).unwrap();
    let ctx = Context::new(cfg, Some(dir.path()), None).unwrap();
    cmd_simulate(&ctx).unwrap();
    let start = Instant::now();
    cmd_recon(&ctx, Method::Zerofill).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn full_pipeline_writes_metrics_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), SMALL);
    let out = dir.path().join("run");
    let res = exprec(&["pipeline", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = metrics.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["label", "snr_db", "nrmse", "t2_mae_ms", "wall_seconds", "config_hash"]);
    let labels: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
    assert_eq!(labels, ["zerofill", "ktlr", "proposed"]);
    let snr = |label: &str| -> f64 { rows.iter().find(|r| r[0] == label).unwrap()[1].parse().unwrap() };
    assert!(snr("proposed") > snr("zerofill"));
    for name in ["mag_truth_f00", "mag_proposed_f05", "t2_ktlr", "t2err_zerofill"] {
        let img = std::fs::read(out.join(format!("{name}.pgm"))).unwrap();
        let (cols, rows, _) = pgm::decode(&img).unwrap();
        assert_eq!((cols, rows), (12, 12));
        assert!(String::from_utf8_lossy(&img[..80]).contains("# config_hash"));
        let side = std::fs::read_to_string(out.join(format!("{name}.txt"))).unwrap();
        assert!(side.contains("min ") && side.contains("max "), "{side}");
    }
}

#[test]
fn constant_t2_renders_as_one_gray_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(
        dir.path(),
        r#"{
            "grid": {"p": 8, "q": 8, "t": 6, "dt_ms": 10},
            "phantom": {"kind": "uniform", "t2_ms": [80]},
            "mask": {"kind": "uniform_random", "fraction": 1.0},
            "filter": {"n1": 3, "n2": 3, "nt": 2}
        }"#,
    );
    let out = dir.path().join("run");
    let res = exprec(&["pipeline", "--config", &cfg, "--out", out.to_str().unwrap(), "--method", "zerofill"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["t2_truth", "t2_zerofill", "t2err_zerofill"] {
        let (_, _, px) = pgm::decode(&std::fs::read(out.join(format!("{name}.pgm"))).unwrap()).unwrap();
        assert!(px.iter().all(|&v| v == px[0]), "{name}");
    }
    let (_, _, px) = pgm::decode(&std::fs::read(out.join("t2_truth.pgm")).unwrap()).unwrap();
    assert_eq!(px[0], pgm::Window::new(0.0, 250.0).level(80.0));
}
