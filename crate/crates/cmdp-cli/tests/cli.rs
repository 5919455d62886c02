//! End-to-end tests of the CLI verbs against the documented file formats.

use cmdp::io::save_cmdp;
use cmdp::mdp::Cmdp;
use std::path::{Path, PathBuf};
use std::process::Command;

fn t1(b: f64) -> Cmdp {
    Cmdp::new(
        2,
        2,
        0.5,
        b,
        vec![1.0, 0.0],
        vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 1.0],
    )
    .unwrap()
}

struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    fn new(tag: &str) -> Workspace {
        let dir = std::env::temp_dir().join(format!("cmdp-cli-test-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn run(args: &[&str]) -> (String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cmdp"))
        .args(args)
        .output()
        .expect("spawning the cmdp binary");
    assert!(
        out.status.success(),
        "cmdp {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn run_expect_failure(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_cmdp"))
        .args(args)
        .output()
        .expect("spawning the cmdp binary");
    assert!(
        !out.status.success(),
        "cmdp {args:?} unexpectedly succeeded"
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn arg(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn solve_prints_the_exact_solution() {
    let ws = Workspace::new("solve");
    let model = ws.path("model.json");
    save_cmdp(&t1(0.9), &model).unwrap();

    let (stdout, _) = run(&["solve", "--model", arg(&model)]);
    let sol: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((sol["optimal_value"].as_f64().unwrap() - 0.2).abs() < 1e-8);
    assert!((sol["lambda_star"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!(sol["feasible"].as_bool().unwrap());

    let (stdout, _) = run(&["solve", "--model", arg(&model), "--b-override", "0"]);
    let sol: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((sol["optimal_value"].as_f64().unwrap() - 2.0).abs() < 1e-8);

    let (stdout, _) = run(&["solve", "--model", arg(&model), "--b-override", "1.5"]);
    let sol: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(!sol["feasible"].as_bool().unwrap());
}

#[test]
fn sample_then_run_pd_round_trips() {
    let ws = Workspace::new("runpd");
    let model = ws.path("model.json");
    save_cmdp(&t1(0.9), &model).unwrap();
    let emp = ws.path("emp.json");
    run(&[
        "--seed",
        "7",
        "sample",
        "--model",
        arg(&model),
        "--n",
        "200",
        "--omega",
        "0.01",
        "--out",
        arg(&emp),
    ]);
    // Determinism: same seed, same bytes.
    let emp2 = ws.path("emp2.json");
    run(&[
        "--seed",
        "7",
        "sample",
        "--model",
        arg(&model),
        "--n",
        "200",
        "--omega",
        "0.01",
        "--out",
        arg(&emp2),
    ]);
    assert_eq!(
        std::fs::read(&emp).unwrap(),
        std::fs::read(&emp2).unwrap(),
        "identical seeds must give identical empirical files"
    );

    let result = ws.path("result.json");
    run(&[
        "run-pd",
        "--emp",
        arg(&emp),
        "--mode",
        "relaxed",
        "--epsilon",
        "0.4",
        "--delta",
        "0.1",
        "--t-cap",
        "20000",
        "--out",
        arg(&result),
    ]);
    let out: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert!(out["t_capped"].as_bool().unwrap());
    let trace_len = out["result"]["trace"]["lambdas"].as_array().unwrap().len();
    assert_eq!(
        trace_len, 20000,
        "result.json must carry the full dual trace"
    );
    assert!(out["result"]["v_reward_hat"].as_f64().unwrap() > 0.0);

    // Manual mode with explicit parameters and no trace.
    let result2 = ws.path("result2.json");
    run(&[
        "run-pd",
        "--emp",
        arg(&emp),
        "--mode",
        "manual",
        "--u",
        "4",
        "--eps-l",
        "0.001",
        "--t",
        "500",
        "--eta",
        "0.05",
        "--no-trace",
        "--out",
        arg(&result2),
    ]);
    let out: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result2).unwrap()).unwrap();
    assert_eq!(
        out["result"]["trace"]["lambdas"].as_array().unwrap().len(),
        0
    );
    assert_eq!(out["result"]["t_executed"].as_u64().unwrap(), 500);
}

#[test]
fn hard_instance_report_and_solve_agree() {
    let ws = Workspace::new("hard");
    let model = ws.path("hard.json");
    let (stdout, _) = run(&[
        "hard-instance",
        "--m",
        "1",
        "--actions",
        "2",
        "--gamma",
        "0.9",
        "--b",
        "0.5",
        "--zeta",
        "0.2",
        "--variant",
        "null",
        "--out",
        arg(&model),
        "--report",
    ]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["total_states"].as_u64().unwrap(), 11);
    assert!((report["measured_slater"].as_f64().unwrap() - 0.2).abs() < 1e-6);
    let v_null = report["v_null"].as_f64().unwrap();

    let (stdout, _) = run(&["solve", "--model", arg(&model)]);
    let sol: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((sol["optimal_value"].as_f64().unwrap() - v_null).abs() < 1e-6);

    // Alternative variant differs and beats the null optimum.
    let alt = ws.path("alt.json");
    run(&[
        "hard-instance",
        "--m",
        "1",
        "--actions",
        "2",
        "--gamma",
        "0.9",
        "--b",
        "0.5",
        "--zeta",
        "0.2",
        "--variant",
        "1,0",
        "--out",
        arg(&alt),
    ]);
    let (stdout, _) = run(&["solve", "--model", arg(&alt)]);
    let sol: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(sol["optimal_value"].as_f64().unwrap() > v_null);
}

#[test]
fn estimate_zeta_on_t1() {
    let ws = Workspace::new("zeta");
    let model = ws.path("model.json");
    save_cmdp(&t1(0.9), &model).unwrap();
    let (stdout, _) = run(&[
        "--seed",
        "3",
        "estimate-zeta",
        "--model",
        arg(&model),
        "--delta",
        "0.1",
        "--kappa",
        "4",
        "--max-rounds",
        "40",
    ]);
    let est: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(est["halted"].as_bool().unwrap());
    assert!((est["zeta_hat"].as_f64().unwrap() - 0.1).abs() < 1e-9);
}

#[test]
fn sweep_and_plot_produce_files() {
    let ws = Workspace::new("sweep");
    let model = ws.path("model.json");
    save_cmdp(&t1(0.9), &model).unwrap();
    let config = ws.path("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "mode": "relaxed",
            "model": { "file": { "path": model.to_str().unwrap() } },
            "epsilon": 0.4,
            "delta": 0.1,
            "n_schedule": [50, 200],
            "seeds": [0, 1, 2],
            "t_cap": 20000,
            "zeta": null,
            "estimate_zeta": null,
            "kappa": null,
            "timing": null
        })
        .to_string(),
    )
    .unwrap();
    let csv = ws.path("sweep.csv");
    run(&["sweep", "--config", arg(&config), "--out", arg(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("seed,n,queries_used,"));
    assert_eq!(
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .count(),
        7,
        "header plus 6 records:\n{text}"
    );
    assert!(text.contains("# aggregate n=50"));

    let svg = ws.path("plot.svg");
    run(&["plot", "--csv", arg(&csv), "--out", arg(&svg)]);
    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert!(svg_text.starts_with("<svg"));
    assert!(svg_text.contains("median reward_gap"));
}

#[test]
fn loader_rejects_bad_models_with_indices() {
    let ws = Workspace::new("badmodel");
    let model = ws.path("bad.json");
    let mut json = serde_json::to_value(cmdp::io::CmdpJson::from(&t1(0.9))).unwrap();
    json["transitions"][0][0][0] = serde_json::json!(0.25);
    std::fs::write(&model, json.to_string()).unwrap();
    let stderr = run_expect_failure(&["solve", "--model", arg(&model)]);
    assert!(
        stderr.contains("transitions[0][0]"),
        "error should name the offending row: {stderr}"
    );
}
