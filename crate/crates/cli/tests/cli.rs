use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[world]
vocab_size = 8
prompt_len = 3
completion_len = 4

[model]
embed_dim = 6
hidden_dim = 8
feature_dim = 6
gold_hidden_dim = 16

[reference]
steps = 10

[data]
train_pairs = 120
validation_pairs = 40

[ppo]
rollout_batch_size = 16
gradient_step_batch_size = 8
total_policy_updates = 6
eval_interval = 3
eval_prompts = 8

[experiment]
seeds = [1]
workers = 1
"#;

fn rmlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmlab"))
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn step_by_step_pipeline() {
    let dir = setup();
    let d = dir.path();
    let p = |rel: &str| d.join(rel).to_str().unwrap().to_string();

    assert!(ok(rmlab(
        d,
        &["gen-data", "--train-pairs", "100", "--noise-rate", "0"]
    ))
    .contains("140 pairs, flipped fraction 0.0000"));
    assert!(ok(rmlab(d, &["gen-data"])).contains("160 pairs"));
    assert!(d.join("out/world/dataset.jsonl").exists());

    let metrics = ok(rmlab(
        d,
        &[
            "--seed",
            "4",
            "train-rm",
            "--regime",
            "ensemble",
            "--k",
            "2",
            "--epochs",
            "2",
            "--output",
            &p("rm.json"),
        ],
    ));
    assert_eq!(metrics.lines().count(), 3);
    assert!(d.join("rm.csv").exists());

    ok(rmlab(
        d,
        &[
            "--seed",
            "4",
            "ppo",
            "--reward-model",
            &p("rm.json"),
            "--curve",
            &p("curve.csv"),
            "--policy-out",
            &p("policy.json"),
        ],
    ));
    let curve = fs::read_to_string(d.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
    assert!(curve.lines().nth(1).unwrap().contains(",ensemble,min"));

    let stats = ok(rmlab(
        d,
        &["eval", &p("curve.csv"), "--aggregate", &p("agg.csv")],
    ));
    assert!(stats.lines().nth(1).unwrap().starts_with("ensemble,4,"));
    assert!(d.join("agg.csv").exists());

    let table = ok(rmlab(
        d,
        &[
            "calib",
            "--reward-model",
            &p("rm.json"),
            "--objective",
            "mean",
            "--bins",
            "5",
        ],
    ));
    assert!(table
        .lines()
        .last()
        .unwrap()
        .starts_with("# objective=mean "));

    ok(rmlab(d, &["plot", "--curves", &p("curve.csv")]));
    assert!(d.join("out/plots/gold_vs_kl.svg").exists());
}

#[test]
fn experiment_prints_summary_and_caches() {
    let dir = setup();
    let summary = ok(rmlab(dir.path(), &["run-experiment"]));
    assert!(summary.starts_with("method,rm_epochs,n_seeds,"));
    assert_eq!(summary.lines().count(), 4);
    let again = rmlab(dir.path(), &["run-experiment"]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("0 stages executed"));
    let ablation = ok(rmlab(dir.path(), &["ablate-epochs", "--grid", "1,3"]));
    assert_eq!(ablation.lines().count(), 3);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(rmlab(d, &["--help"]).status.code(), Some(0));
    assert_eq!(rmlab(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        rmlab(d, &["calib", "--reward-model", "missing.json"])
            .status
            .code(),
        Some(1)
    );

    fs::write(d.join("tiny.toml"), "[ppo]\nclip_epsilon = -1.0\n").unwrap();
    let bad = rmlab(d, &["run-experiment"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("clip_epsilon"));

    fs::write(d.join("tiny.toml"), TINY).unwrap();
    assert_eq!(
        rmlab(d, &["gen-data", "--noise-rate", "1.5"]).status.code(),
        Some(1)
    );
    ok(rmlab(d, &["gen-data"]));
    fs::write(d.join("rm.json"), "{\"format\": \"something else\"}").unwrap();
    let out = rmlab(
        d,
        &[
            "calib",
            "--reward-model",
            d.join("rm.json").to_str().unwrap(),
        ],
    );
    assert_ne!(out.status.code(), Some(0));
}
