use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn modeconn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modeconn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not json ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

const DATA: [&str; 6] = ["--teacher-width", "3", "--input-dim", "4", "--samples", "200"];

fn train(dir: &Path, name: &str, seed: &str) -> String {
    let model = dir.join(name).display().to_string();
    let mut args = vec![
        "train",
        "--hidden",
        "8,8",
        "--iterations",
        "150",
        "--lr",
        "0.02",
        "--seed",
        seed,
        "--out",
        &model,
    ];
    args.extend(DATA);
    let out = modeconn(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["experiment"], "train");
    assert!(summary["final_loss"].as_f64().unwrap().is_finite());
    model
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&modeconn(&["--help"])), 0);
    assert_eq!(code(&modeconn(&["--version"])), 0);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&modeconn(&["train", "--no-such-flag"])), 1);
}

#[test]
fn trained_model_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "a.json", "1");
    let net = modeconn::net::Network::from_json(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(net.dims(), vec![4, 8, 8, 1]);
    assert_eq!(modeconn::net::Network::from_json(&net.to_json()).unwrap(), net);
}

#[test]
fn identical_models_connect_without_barrier() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "a.json", "2");
    for method in ["linear", "thm31", "thm41"] {
        let mut args = vec![
            "connect",
            "--model-a",
            &model,
            "--model-b",
            &model,
            "--method",
            method,
            "--segments-grid",
            "4",
        ];
        args.extend(DATA);
        let out = modeconn(&args);
        assert_eq!(code(&out), 0, "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let summary = stdout_json(&out);
        let barrier = summary["barrier"].as_f64().unwrap();
        assert!(barrier.abs() <= 1e-9, "{method}: barrier {barrier}");
    }
}

#[test]
fn connect_writes_profile_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a.json", "3");
    let b = train(dir.path(), "b.json", "4");
    let csv = dir.path().join("profile.csv").display().to_string();
    let mut args = vec![
        "connect",
        "--model-a",
        &a,
        "--model-b",
        &b,
        "--method",
        "thm31",
        "--segments-grid",
        "3",
        "--out",
        &csv,
    ];
    args.extend(DATA);
    let out = modeconn(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["segments"], 20);
    let body = fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().next(), Some("t,loss,accuracy"));
    assert_eq!(body.lines().count(), 1 + 20 * 3 + 1);
}

#[test]
fn sweep_writes_header_and_rejects_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "a.json", "5");
    let csv = dir.path().join("sweep.csv").display().to_string();
    let mut args = vec![
        "sweep-dropout",
        "--model",
        &model,
        "--p-list",
        "0,0.5",
        "--trials",
        "3",
        "--out",
        &csv,
    ];
    args.extend(DATA);
    let out = modeconn(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let body = fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().next(), Some("p,keep_units,best_loss,best_acc"));
    assert_eq!(body.lines().count(), 3);

    let mut args = vec!["sweep-dropout", "--model", &model, "--p-list", ""];
    args.extend(DATA);
    assert_eq!(code(&modeconn(&args)), 1);
}

#[test]
fn bad_hidden_list_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json").display().to_string();
    let mut args = vec!["train", "--hidden", "8,x", "--out", &model];
    args.extend(DATA);
    assert_eq!(code(&modeconn(&args)), 1);
    let mut args = vec!["train", "--hidden", "", "--out", &model];
    args.extend(DATA);
    assert_eq!(code(&modeconn(&args)), 1);
}

#[test]
fn missing_model_file_is_a_runtime_error() {
    let mut args = vec!["stability", "--model", "/nonexistent/model.json"];
    args.extend(DATA);
    assert_eq!(code(&modeconn(&args)), 2);
}

#[test]
fn stability_report_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "a.json", "6");
    let report = dir.path().join("report.json").display().to_string();
    let hist = dir.path().join("hist").display().to_string();
    let mut args = vec![
        "stability",
        "--model",
        &model,
        "--realizations",
        "2",
        "--t-grid",
        "3",
        "--report",
        &report,
        "--hist-dir",
        &hist,
    ];
    args.extend(DATA);
    let out = modeconn(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["depth"], 3);
    // an all-dead layer makes the contraction infinite, written as null
    match rep["contraction"].as_f64() {
        Some(c) => assert!(c >= 1.0),
        None => assert!(rep["warnings"].to_string().contains("unbounded"), "{}", rep["warnings"]),
    }
    assert!(Path::new(&hist).join("layer_cushion_2.csv").exists());
}

#[test]
fn counterexample_reports_exact_minima() {
    let out = modeconn(&["counterexample"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("1.8583333333333334"), "{text}");

    let out = modeconn(&["counterexample", "--k", "3"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k > h"));
}

#[test]
fn narrow_sweep_lists_every_width() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("narrow.csv").display().to_string();
    let mut args = vec![
        "narrow-sweep",
        "--max-width",
        "3",
        "--iterations",
        "50",
        "--lr",
        "0.02",
        "--out",
        &csv,
    ];
    args.extend(DATA);
    let out = modeconn(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let body = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "width,final_loss");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,"));
}
