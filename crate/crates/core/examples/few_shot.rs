//! Few-shot sweep: for each shot count, fine-tune on that many demonstrations
//! per task and post-train from the same checkpoint. Writes `few_shot.csv`.
//!
//! cargo run --release --example few_shot [config.toml]

use std::path::PathBuf;

use posttrain::harness::{few_shot_sweep, ExperimentConfig};

fn main() -> posttrain::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/keydoor8.toml")));
    let mut config = ExperimentConfig::load(&path)?;
    config.shots = vec![1, 5, 10];
    let out = config.out_dir.join("few_shot");
    println!("{:>6} {:>14} {:>14}", "shots", "SFT", "SFT + RIPT");
    for r in few_shot_sweep(&config, &config.shots, &out)? {
        println!(
            "{:>6} {:>7.3} ± {:.3} {:>7.3} ± {:.3}",
            r.shots, r.sft_mean, r.sft_std, r.ript_mean, r.ript_std
        );
    }
    Ok(())
}
