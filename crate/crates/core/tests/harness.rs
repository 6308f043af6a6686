use std::fs;
use std::path::Path;

use rmlab_core::harness::{
    load_manifest, parse_config, parse_config_str, run_epoch_ablation_in, run_full_experiment_in,
    verify_manifest, ExperimentConfig, MANIFEST_FILE,
};
use rmlab_core::reward_training::Method;
use rmlab_core::Error;

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
seeds = [1, 2]
workers = 2
"#;

fn tiny() -> ExperimentConfig {
    parse_config_str(TINY).unwrap()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap()
}

#[test]
fn committed_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let example = parse_config(root.join("example.toml")).unwrap();
    assert_eq!(example.ppo.total_policy_updates, 2000);
    assert_eq!(example.experiment.methods, Method::ALL.to_vec());
    let defaults = ExperimentConfig {
        experiment: example.experiment.clone(),
        ..ExperimentConfig::default()
    };
    assert_eq!(example, defaults);
    parse_config(root.join("smoke.toml")).unwrap();
}

#[test]
fn rerunning_an_experiment_executes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_full_experiment_in(&tiny(), dir.path()).unwrap();
    assert_eq!(first.runs.len(), 6);
    assert_eq!(first.executed_stages.len(), first.stages.len());
    let curves = read(dir.path(), "curves.csv");
    let second = run_full_experiment_in(&tiny(), dir.path()).unwrap();
    assert!(
        second.executed_stages.is_empty(),
        "{:?}",
        second.executed_stages
    );
    assert_eq!(read(dir.path(), "curves.csv"), curves);
    assert_eq!(
        first
            .stages
            .iter()
            .map(|s| (&s.name, &s.key, &s.outputs))
            .collect::<Vec<_>>(),
        second
            .stages
            .iter()
            .map(|s| (&s.name, &s.key, &s.outputs))
            .collect::<Vec<_>>()
    );
    verify_manifest(
        dir.path(),
        &load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(),
    )
    .unwrap();
    for rel in [
        "plots/gold_vs_kl.svg",
        "plots/proxy_vs_kl.svg",
        "aggregate.csv",
        "summary.csv",
        "run_stats.csv",
    ] {
        assert!(dir.path().join(rel).exists(), "{rel}");
    }
}

#[test]
fn deleted_or_edited_outputs_rerun_only_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    run_full_experiment_in(&cfg, dir.path()).unwrap();
    let curve = "runs/multihead-e1-s2/curve.csv";
    let before = read(dir.path(), curve);
    fs::remove_file(dir.path().join(curve)).unwrap();
    let m = run_full_experiment_in(&cfg, dir.path()).unwrap();
    assert_eq!(m.executed_stages, vec!["ppo:multihead-e1-s2".to_string()]);
    assert_eq!(read(dir.path(), curve), before);

    fs::write(dir.path().join("world/dataset.jsonl"), b"corrupt\n").unwrap();
    let m = run_full_experiment_in(&cfg, dir.path()).unwrap();
    assert_eq!(m.executed_stages, vec!["dataset".to_string()]);
}

#[test]
fn changing_a_ppo_setting_keeps_the_reward_models() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    run_full_experiment_in(&cfg, dir.path()).unwrap();
    cfg.ppo.kl_coefficient = 0.1;
    let m = run_full_experiment_in(&cfg, dir.path()).unwrap();
    assert!(
        m.executed_stages
            .iter()
            .all(|s| s.starts_with("ppo:") || s == "aggregate"),
        "{:?}",
        m.executed_stages
    );
    assert_eq!(
        m.executed_stages
            .iter()
            .filter(|s| s.starts_with("ppo:"))
            .count(),
        6
    );
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    run_full_experiment_in(&cfg, a.path()).unwrap();
    cfg.experiment.workers = 1;
    run_full_experiment_in(&cfg, b.path()).unwrap();
    assert_eq!(read(a.path(), "curves.csv"), read(b.path(), "curves.csv"));
    assert_eq!(
        read(a.path(), "aggregate.csv"),
        read(b.path(), "aggregate.csv")
    );
}

#[test]
fn ablation_reuses_comparison_runs_and_keeps_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    run_full_experiment_in(&cfg, dir.path()).unwrap();
    let m = run_epoch_ablation_in(&cfg, &[3, 1, 3], dir.path()).unwrap();
    assert!(
        m.executed_stages.iter().all(|s| !s.contains("-e3-")),
        "{:?}",
        m.executed_stages
    );
    assert!(m.executed_stages.iter().any(|s| s == "ppo:ensemble-e1-s1"));
    let summary = String::from_utf8(read(dir.path(), "epoch_ablation_summary.csv")).unwrap();
    let epochs: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, vec!["3", "1", "3"]);
    assert!(run_epoch_ablation_in(&cfg, &[], dir.path()).is_err());
    assert!(run_epoch_ablation_in(&cfg, &[0], dir.path()).is_err());
}

#[test]
fn invalid_configs_fail_before_any_stage_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.experiment.k = 0;
    match run_full_experiment_in(&cfg, dir.path()) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "experiment.k"),
        other => panic!("{other:?}"),
    }
    assert!(!dir.path().join(MANIFEST_FILE).exists());
    let err = parse_config_str("[ppo]\nclip_epsilon = 2.0\n").unwrap_err();
    assert!(err.is_validation());
}
