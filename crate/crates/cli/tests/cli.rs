//! End-to-end checks of the binary: every subcommand, deterministic
//! artifacts, and config error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tierroute")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn write_sim_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let body = format!(
        "strategy = \"simulated\"\nlambda = 0.3\nseed = 5\n\n[ppo]\nmax_steps = 3\nbatch = 6\nval_every = 2\n\n[simenv]\ntrain = 20\nval = 8\ntest = 8\nembed_dim = 16\n\n[router]\nhidden = 24\n{extra}"
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn test_train_artifacts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_sim_config(dir.path(), "");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let result = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(result.status.success(), "stderr: {}", stderr(&result));
        assert!(stdout(&result).contains("trained 3 steps"));
    }
    for name in ["run_log.jsonl", "episodes.jsonl", "router_final.ckpt", "router_best.ckpt"] {
        assert!(out_a.join(name).exists(), "missing {name}");
    }
    let log_a = std::fs::read(out_a.join("run_log.jsonl")).unwrap();
    let log_b = std::fs::read(out_b.join("run_log.jsonl")).unwrap();
    assert_eq!(log_a, log_b, "run logs must be byte-identical for one seed");
    assert_eq!(
        std::fs::read(out_a.join("router_final.ckpt")).unwrap(),
        std::fs::read(out_b.join("router_final.ckpt")).unwrap()
    );
    assert_eq!(
        std::fs::read(out_a.join("episodes.jsonl")).unwrap(),
        std::fs::read(out_b.join("episodes.jsonl")).unwrap()
    );
    let log_text = String::from_utf8(log_a).unwrap();
    assert_eq!(log_text.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(log_text.lines().next().unwrap()).unwrap();
    for key in [
        "step", "mean_r", "mean_r_task", "mean_cost", "alpha", "loss", "policy_loss",
        "value_loss", "entropy", "tier_ratio",
    ] {
        assert!(first.get(key).is_some(), "run log missing {key}");
    }
    assert_eq!(first["step"], 1);
    assert_eq!(first["tier_ratio"].as_array().unwrap().len(), 5);

    let episodes = std::fs::read_to_string(out_a.join("episodes.jsonl")).unwrap();
    assert_eq!(episodes.lines().count(), 18);
    let row: serde_json::Value = serde_json::from_str(episodes.lines().next().unwrap()).unwrap();
    for key in ["step", "query_id", "tiers", "r_task", "c_raw", "r_cost", "alpha", "r"] {
        assert!(row.get(key).is_some(), "episode trace missing {key}");
    }
    assert_eq!(row["tiers"].as_array().unwrap().len(), 5);
}

#[test]
fn test_seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_sim_config(dir.path(), "");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let base = ["train", "--config"];
    let result = run(&[base[0], base[1], config.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    assert!(result.status.success());
    let result = run(&[
        base[0],
        base[1],
        config.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    assert_ne!(
        std::fs::read(out_a.join("run_log.jsonl")).unwrap(),
        std::fs::read(out_b.join("run_log.jsonl")).unwrap()
    );
}

#[test]
fn test_eval_reads_checkpoint_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_sim_config(dir.path(), "");
    let out = dir.path().join("run");
    assert!(run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let checkpoint = out.join("router_final.ckpt");
    let before: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    let result = run(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "stderr: {}", stderr(&result));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&result)).unwrap();
    assert_eq!(summary["split"], "test");
    assert_eq!(summary["queries"], 8);
    assert!(summary["mean_r_task"].as_f64().unwrap().is_finite());
    assert!(summary["mean_cost"].as_f64().unwrap() >= 0.0);
    assert!(summary["mean_judge"].is_null());
    let after: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(before.len(), after.len(), "eval must not create files");

    let again = run(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(stdout(&result), stdout(&again), "eval output must be deterministic");
}

#[test]
fn test_sweep_csv_shape() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_sim_config(dir.path(), "");
    let csv_path = dir.path().join("frontier.csv");
    let result = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--lambdas",
        "0,0.9",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "stderr: {}", stderr(&result));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("lambda,r_task,cost,filter_low,"));
    assert!(lines[1].starts_with("0.00000,"));
    assert!(lines[2].starts_with("0.900000,"));
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 18);
    }
    assert!(dir.path().join("frontier.runs").join("lambda-0.00000").join("router_final.ckpt").exists());
}

#[test]
fn test_ratios_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_sim_config(dir.path(), "");
    let out = dir.path().join("run");
    assert!(run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let result = run(&[
        "ratios",
        "--checkpoint",
        out.join("router_best.ckpt").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "stderr: {}", stderr(&result));
    let text = stdout(&result);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "module,low,mid,high");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("filter,"));
    assert!(lines[5].starts_with("summary,"));
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        let total: f64 = cells[1..].iter().map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-4, "{line}");
    }
}

#[test]
fn test_oracle_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_sim_config(dir.path(), "");
    let result = run(&[
        "oracle",
        "--config",
        config.to_str().unwrap(),
        "--lambdas",
        "0,0.5",
    ]);
    assert!(result.status.success(), "stderr: {}", stderr(&result));
    let text = stdout(&result);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lambda,r_task,cost,objective");
    assert_eq!(lines.len(), 3);
    // At lambda zero the oracle always meets every requirement.
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "0.00000");
    assert_eq!(cells[1], "1.00000");
}

#[test]
fn test_zero_step_training() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        "strategy = \"simulated\"\nseed = 1\n\n[ppo]\nmax_steps = 0\n\n[simenv]\ntrain = 10\nval = 4\ntest = 4\nembed_dim = 16\n\n[router]\nhidden = 24\n",
    )
    .unwrap();
    let out = dir.path().join("zero");
    let result = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "stderr: {}", stderr(&result));
    assert!(out.join("router_final.ckpt").exists());
    let log = std::fs::read_to_string(out.join("run_log.jsonl")).unwrap();
    assert!(log.is_empty(), "zero-step run log must have an empty body");
}

#[test]
fn test_config_errors_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "strategy = \"reasoning\"\n[simenv]\n").unwrap();
    let result = run(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!result.status.success());
    assert!(stderr(&result).starts_with("error:"), "stderr: {}", stderr(&result));

    let result = run(&["train", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert!(!result.status.success());

    let config = write_sim_config(dir.path(), "");
    let result = run(&["train", "--config", config.to_str().unwrap(), "--lambda=-1"]);
    assert!(!result.status.success());
    assert!(stderr(&result).contains("lambda"));
}

#[test]
fn test_oracle_requires_simenv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.jsonl"), "").unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        "strategy = \"implementation\"\n[data]\npath = \"data.jsonl\"\n",
    )
    .unwrap();
    let result = run(&[
        "oracle",
        "--config",
        config_path.to_str().unwrap(),
        "--lambdas",
        "0",
    ]);
    assert!(!result.status.success());
    assert!(stderr(&result).contains("simenv"));
}
