//! Transfer study. `cross-scenario` pretrains on one layout of a task and
//! adapts to another layout of the same task; `cross-goal` pretrains on one
//! goal and adapts to a different goal in the same layout.
//!
//! cargo run --release --example transfer [cross-scenario|cross-goal] [config.toml]

use std::path::PathBuf;

use posttrain::harness::{transfer_experiment, ExperimentConfig, TransferMode};

fn main() -> posttrain::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode = match args.next().as_deref() {
        Some("cross-goal") => TransferMode::CrossGoal,
        _ => TransferMode::CrossScenario,
    };
    let default = match mode {
        TransferMode::CrossGoal => "cross_goal.toml",
        TransferMode::CrossScenario => "cross_scenario.toml",
    };
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(default));
    let config = ExperimentConfig::load(&path)?;
    let out = config.out_dir.join("transfer");
    for r in transfer_experiment(&config, mode, &config.shots, &out)? {
        println!(
            "{:?}, {} shot(s): SFT {:.3} ± {:.3} -> RIPT {:.3} ± {:.3}",
            r.mode, r.shots, r.sft_mean, r.sft_std, r.ript_mean, r.ript_std
        );
    }
    println!("per-run rows and eval curves in {}", out.display());
    Ok(())
}
