use std::path::PathBuf;

use posttrain::harness::{few_shot_sweep, load_policy, run_pipeline, ExperimentConfig};
use posttrain::Error;

const TINY: &str = r#"
seeds = [0]
shots = [1, 2]
[suite]
seed = 4
n_tasks = 2
grid_size = 5
horizon = 14
families = ["reach", "key_door"]
[policy]
hidden = [16]
[data]
pretrain_per_task = 4
sft_pool_per_task = 4
[pretrain]
steps = 20
[sft]
steps = 20
[ript]
k = 4
b = 8
n = 1
m = 2
minibatch = 4
[eval]
contexts_per_task = 6
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY).unwrap()
}

#[test]
fn zero_ript_steps_leave_sft_policy_unchanged() {
    let mut cfg = tiny();
    cfg.ript.m = 0;
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = run_pipeline(&cfg, 3, dir.path()).unwrap();
    assert_eq!(summary.ript_steps, 0);
    assert_eq!(summary.sr_ript, summary.sr_sft);
    let sft = std::fs::read(dir.path().join("sft.ckpt")).unwrap();
    let ript = std::fs::read(dir.path().join("ript.ckpt")).unwrap();
    assert_eq!(sft, ript);
}

#[test]
fn pipeline_writes_stage_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, policy) = run_pipeline(&tiny(), 0, dir.path()).unwrap();
    for f in [
        "pretrain.ckpt",
        "sft.ckpt",
        "ript.ckpt",
        "eval_pretrain.json",
        "eval_sft.json",
        "eval_ript.json",
        "episodes_ript.jsonl",
        "ript_metrics.jsonl",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("ript_metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), summary.ript_steps);
    let reloaded = load_policy(&dir.path().join("ript.ckpt")).unwrap();
    let text = |p: &posttrain::policy::Policy| p.to_checkpoint().unwrap().to_text().unwrap();
    assert_eq!(text(&reloaded), text(&policy));
}

#[test]
fn missing_suite_file_is_a_config_error() {
    let mut cfg = tiny();
    cfg.suite_file = Some(PathBuf::from("/nonexistent/suite.toml"));
    let dir = tempfile::tempdir().unwrap();
    match run_pipeline(&cfg, 0, dir.path()) {
        Err(Error::Config(msg)) => assert!(msg.contains("suite.toml"), "{msg}"),
        Err(other) => panic!("expected a config error, got {other}"),
        Ok(_) => panic!("expected a config error"),
    }
}

#[test]
fn shot_count_beyond_pool_is_rejected() {
    let text = TINY.replace("shots = [1, 2]", "shots = [1, 9]");
    assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
}

#[test]
fn few_shot_csv_has_one_row_per_shot_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let rows = few_shot_sweep(&cfg, &cfg.shots, dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    let mut reader = csv::Reader::from_path(dir.path().join("few_shot.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["shots", "sft_mean", "sft_std", "ript_mean", "ript_std"]);
    let records: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(&records[0][0], "1");
    assert_eq!(&records[1][0], "2");
    let runs = csv::Reader::from_path(dir.path().join("few_shot_runs.csv")).unwrap().into_records().count();
    assert_eq!(runs, 2 * cfg.seeds.len());
}
