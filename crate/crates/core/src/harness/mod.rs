//! Experiment plumbing: TOML configuration, greedy evaluation, the
//! three-stage pipeline and the sweep and ablation drivers. Every run writes
//! JSONL logs, CSV tables and checkpoints under its output directory.

mod artifacts;
mod config;
mod eval;
mod experiments;
mod pipeline;

pub use artifacts::{mean, std_dev, write_csv, write_json, write_jsonl, JsonlWriter};
pub use config::{AblationConfig, DataConfig, EvalConfig, ExperimentConfig, ScaleFitConfig};
pub use eval::{evaluate, greedy_episode, EpisodeRecord, EvalReport, TaskResult};
pub use experiments::*;
pub use pipeline::{build_suite, generate_demos, load_policy, run_all_seeds, run_pipeline, Run, RunSummary, ScaleFitRecord};
