//! End-to-end tests of the command-line interface: pipeline wiring, exit
//! codes, report reproducibility, and frozen CSV formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lipkit"))
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lipkit-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn lipkit");
    assert!(
        out.status.success(),
        "lipkit {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("spawn lipkit")
        .status
        .code()
        .expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// gen-data -> train -> attack at radius zero reproduces the training
/// report's clean accuracy exactly.
#[test]
fn attack_at_zero_radius_matches_clean_accuracy() {
    let dir = work_dir("zero-radius");
    let data = dir.join("data.csv");
    let model = dir.join("model.txt");
    let attack = dir.join("attack.json");

    run_ok(&[
        "gen-data",
        "--per-class",
        "15",
        "--dim",
        "2",
        "--seed",
        "5",
        "--out",
        &s(&data),
    ]);
    run_ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&model),
        "--lip",
        "8",
        "--outer-iters",
        "6",
        "--seed",
        "3",
    ]);
    run_ok(&[
        "attack",
        "--model",
        &s(&model),
        "--data",
        &s(&data),
        "--deltas",
        "0",
        "--out",
        &s(&attack),
    ]);

    let train_report = json(&dir.join("model.txt.report.json"));
    let attack_report = json(&attack);
    let clean = train_report["report"]["clean_accuracy"].as_f64().unwrap();
    let at_zero = attack_report["report"]["rows"][0]["accuracy"]
        .as_f64()
        .unwrap();
    assert_eq!(clean, at_zero, "clean {clean} vs delta-0 accuracy {at_zero}");
}

/// The same holds through the multiclass scorer.
#[test]
fn multiclass_pipeline_agrees_at_zero_radius() {
    let dir = work_dir("multiclass");
    let data = dir.join("data.csv");
    let model = dir.join("model.txt");
    let attack = dir.join("attack.json");

    run_ok(&[
        "gen-data",
        "--per-class",
        "8",
        "--classes",
        "3",
        "--dim",
        "2",
        "--seed",
        "11",
        "--out",
        &s(&data),
    ]);
    run_ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&model),
        "--lip",
        "25",
        "--outer-iters",
        "5",
        "--seed",
        "2",
    ]);
    run_ok(&[
        "attack",
        "--model",
        &s(&model),
        "--data",
        &s(&data),
        "--deltas",
        "0,0.05",
        "--steps",
        "25",
        "--out",
        &s(&attack),
    ]);

    let train_report = json(&dir.join("model.txt.report.json"));
    let attack_report = json(&attack);
    assert_eq!(train_report["report"]["class_values"].as_array().unwrap().len(), 3);
    let clean = train_report["report"]["clean_accuracy"].as_f64().unwrap();
    let rows = attack_report["report"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["accuracy"].as_f64().unwrap(), clean);
    assert!(rows[1]["accuracy"].as_f64().unwrap() <= clean);
}

/// Reports are deterministic, and re-running from the echoed configuration
/// reproduces every numeric field byte-for-byte.
#[test]
fn reports_reproduce_from_the_echoed_config() {
    let dir = work_dir("echo");
    let data = dir.join("data.csv");
    run_ok(&[
        "gen-data",
        "--per-class",
        "12",
        "--seed",
        "7",
        "--out",
        &s(&data),
    ]);

    let args = |out: &Path, report: &Path| {
        vec![
            "train".to_string(),
            "--data".into(),
            s(&data),
            "--out".into(),
            s(out),
            "--report".into(),
            s(report),
            "--lip".into(),
            "6".into(),
            "--outer-iters".into(),
            "5".into(),
            "--seed".into(),
            "4".into(),
        ]
    };
    let (m1, r1) = (dir.join("m1.txt"), dir.join("r1.json"));
    let (m2, r2) = (dir.join("m2.txt"), dir.join("r2.json"));
    run_ok(&args(&m1, &r1).iter().map(String::as_str).collect::<Vec<_>>());
    run_ok(&args(&m2, &r2).iter().map(String::as_str).collect::<Vec<_>>());
    let bytes1 = std::fs::read(&r1).unwrap();
    assert_eq!(bytes1, std::fs::read(&r2).unwrap(), "same flags, same report");
    assert_eq!(
        std::fs::read(&m1).unwrap(),
        std::fs::read(&m2).unwrap(),
        "same flags, same model file"
    );

    // Feed the echoed config back in; only the data and paths are given on
    // the command line.
    let echoed = json(&r1)["report"]["train"]["config"].clone();
    let cfg_path = dir.join("echoed.json");
    std::fs::write(&cfg_path, serde_json::to_string(&echoed).unwrap()).unwrap();
    let (m3, r3) = (dir.join("m3.txt"), dir.join("r3.json"));
    run_ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&m3),
        "--report",
        &s(&r3),
        "--config",
        &s(&cfg_path),
    ]);
    assert_eq!(bytes1, std::fs::read(&r3).unwrap(), "echoed config reproduces the report");
}

/// Loading a saved model is deterministic end to end: two attack runs over
/// the same bundle produce identical reports.
#[test]
fn saved_models_predict_identically_across_loads() {
    let dir = work_dir("roundtrip");
    let data = dir.join("data.csv");
    let model = dir.join("model.txt");
    run_ok(&[
        "gen-data",
        "--per-class",
        "10",
        "--seed",
        "9",
        "--out",
        &s(&data),
    ]);
    run_ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&model),
        "--lip",
        "10",
        "--outer-iters",
        "4",
        "--seed",
        "1",
    ]);
    let (a1, a2) = (dir.join("a1.json"), dir.join("a2.json"));
    for out in [&a1, &a2] {
        run_ok(&[
            "attack",
            "--model",
            &s(&model),
            "--data",
            &s(&data),
            "--deltas",
            "0,0.1",
            "--steps",
            "20",
            "--out",
            &s(out),
        ]);
    }
    assert_eq!(std::fs::read(&a1).unwrap(), std::fs::read(&a2).unwrap());
}

#[test]
fn exit_codes_separate_config_errors_from_success() {
    let dir = work_dir("exits");
    let data = dir.join("data.csv");
    run_ok(&[
        "gen-data",
        "--per-class",
        "6",
        "--seed",
        "1",
        "--out",
        &s(&data),
    ]);

    // Missing budget: configuration error.
    assert_eq!(
        exit_code(&[
            "train",
            "--data",
            &s(&data),
            "--out",
            &s(&dir.join("m.txt")),
        ]),
        2
    );
    // Unknown flag: clap reports usage errors as 2.
    assert_eq!(exit_code(&["certify", "--no-such-flag"]), 2);
    // Missing model file.
    assert_eq!(
        exit_code(&[
            "attack",
            "--model",
            &s(&dir.join("absent.txt")),
            "--data",
            &s(&data),
        ]),
        2
    );
    // Malformed CSV rows carry their line number to stderr.
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "label,x0\n1,oops\n").unwrap();
    let out = bin()
        .args([
            "train",
            "--data",
            &s(&bad),
            "--out",
            &s(&dir.join("m.txt")),
            "--lip",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // A healthy oracle run exits cleanly.
    assert_eq!(exit_code(&["certify", "--cases", "20", "--seed", "3"]), 0);
}

#[test]
fn csv_outputs_use_frozen_headers() {
    let dir = work_dir("csv");
    let data = dir.join("data.csv");
    let model = dir.join("model.txt");
    run_ok(&[
        "gen-data",
        "--per-class",
        "8",
        "--seed",
        "2",
        "--out",
        &s(&data),
    ]);
    run_ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&model),
        "--lip",
        "10",
        "--outer-iters",
        "3",
        "--seed",
        "6",
    ]);

    let acc = dir.join("acc.csv");
    run_ok(&[
        "attack",
        "--model",
        &s(&model),
        "--data",
        &s(&data),
        "--deltas",
        "0,0.1",
        "--steps",
        "10",
        "--csv",
        &s(&acc),
    ]);
    assert!(std::fs::read_to_string(&acc)
        .unwrap()
        .starts_with("delta,accuracy\n"));

    let scatter = dir.join("scatter.csv");
    run_ok(&[
        "scatter",
        "--models",
        "4",
        "--per-class",
        "6",
        "--steps",
        "15",
        "--restarts",
        "3",
        "--csv",
        &s(&scatter),
    ]);
    assert!(std::fs::read_to_string(&scatter)
        .unwrap()
        .starts_with("model_id,adversarial_risk,regularised_risk\n"));

    let spec_csv = dir.join("spectrum.csv");
    let curve_csv = dir.join("curve.csv");
    run_ok(&[
        "spectrum",
        "--kernel",
        "gaussian",
        "--sigma",
        "0.8",
        "--j-max",
        "10",
        "--dim",
        "1",
        "--curve",
        "4,8",
        "--trials",
        "2",
        "--csv",
        &s(&spec_csv),
        "--curve-csv",
        &s(&curve_csv),
    ]);
    assert!(std::fs::read_to_string(&spec_csv)
        .unwrap()
        .starts_with("j,lambda\n"));
    assert!(std::fs::read_to_string(&curve_csv)
        .unwrap()
        .starts_with("n,median_error\n"));
}

/// The documented periodic run reports the geometric decay condition with
/// the default constants, including its analytic failure at j = 1.
#[test]
fn spectrum_reports_the_decay_condition() {
    let dir = work_dir("decay");
    let out = dir.join("spectrum.json");
    let output = run_ok(&[
        "spectrum",
        "--kernel",
        "periodic",
        "--v",
        "3.14159",
        "--sigma2",
        "0.5",
        "--out",
        &s(&out),
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("decay check"), "stdout: {stdout}");

    let report = json(&out);
    let decay = &report["report"]["decay"];
    assert_eq!(decay["c4"].as_f64().unwrap(), 2.0);
    assert_eq!(decay["c6"].as_f64().unwrap(), 1.6);
    assert_eq!(decay["first_violation"].as_u64(), Some(1));
    let mercer = report["report"]["mercer_sum"].as_f64().unwrap();
    assert!((mercer - 1.0).abs() < 1e-6);
    assert!(report["report"]["constants"]["n_eps"].as_u64().unwrap() >= 1);
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = work_dir("gen");
    let (a, b, c) = (dir.join("a.csv"), dir.join("b.csv"), dir.join("c.csv"));
    for (path, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        run_ok(&[
            "gen-data",
            "--task",
            "two-moons",
            "--per-class",
            "9",
            "--seed",
            seed,
            "--out",
            &s(path),
        ]);
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    assert_ne!(bytes_a, std::fs::read(&c).unwrap());
}

/// All five estimates appear, and a bundle saved by `train` feeds straight
/// into `lipschitz`.
#[test]
fn lipschitz_lists_every_method() {
    let dir = work_dir("lip");
    let data = dir.join("data.csv");
    let model = dir.join("model.txt");
    let out = dir.join("lip.json");
    run_ok(&[
        "gen-data",
        "--per-class",
        "8",
        "--seed",
        "4",
        "--out",
        &s(&data),
    ]);
    run_ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&model),
        "--lip",
        "10",
        "--outer-iters",
        "3",
        "--seed",
        "8",
    ]);
    let output = run_ok(&[
        "lipschitz",
        "--model",
        &s(&model),
        "--witnesses",
        "12",
        "--restarts",
        "4",
        "--out",
        &s(&out),
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    for name in [
        "exact-diag",
        "coord-nystrom",
        "holistic-nystrom",
        "rkhs-norm",
        "empirical-search",
    ] {
        assert!(stdout.contains(name), "missing {name} in: {stdout}");
    }
    let report = json(&out);
    assert_eq!(report["report"]["estimates"][0].as_array().unwrap().len(), 5);
}
