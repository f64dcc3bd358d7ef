//! Pretrain (if configured), fine-tune and post-train on every seed of a
//! config, then print per-seed success rates. Artifacts land in
//! `runs/keydoor_pipeline/seed{n}`.
//!
//! cargo run --release --example keydoor_pipeline [config.toml]

use std::path::PathBuf;

use posttrain::harness::{mean, run_all_seeds, ExperimentConfig};

fn main() -> posttrain::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/keydoor8.toml")));
    let config = ExperimentConfig::load(&path)?;
    let out = config.out_dir.join("keydoor_pipeline");
    let rows = run_all_seeds(&config, &out)?;
    println!("{:>5} {:>9} {:>7} {:>7} {:>6} {:>10}", "seed", "pretrain", "sft", "ript", "steps", "status");
    for r in &rows {
        println!(
            "{:>5} {:>9.3} {:>7.3} {:>7.3} {:>6} {:>10?}",
            r.seed, r.sr_pretrain, r.sr_sft, r.sr_ript, r.ript_steps, r.ript_status
        );
    }
    let sft: Vec<f64> = rows.iter().map(|r| r.sr_sft).collect();
    let ript: Vec<f64> = rows.iter().map(|r| r.sr_ript).collect();
    println!("mean: SFT {:.3} -> RIPT {:.3}  (summary in {})", mean(&sft), mean(&ript), out.display());
    Ok(())
}
