//! Continuous control with a Laplace action head: SFT, scale-head fit on the
//! SFT demonstrations, then post-training. Prints the fitted scale curve and
//! the success rate at each stage for one seed.
//!
//! cargo run --release --example pointreach_laplace [seed]

use posttrain::harness::{run_pipeline, ExperimentConfig};

fn main() -> posttrain::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/pointreach.toml");
    let config = ExperimentConfig::load(std::path::Path::new(path))?;
    let dir = config.out_dir.join(format!("pointreach/seed{seed}"));
    let (summary, _) = run_pipeline(&config, seed, &dir)?;

    let fit = std::fs::read_to_string(dir.join("sft_scale_fit.jsonl")).map_err(|source| posttrain::Error::Io { path: dir.clone(), source })?;
    let lines: Vec<&str> = fit.lines().collect();
    for line in lines.iter().step_by(100).chain(lines.last()) {
        println!("scale fit {line}");
    }
    println!(
        "seed {seed}: SFT {:.3} -> RIPT {:.3} after {} steps ({:?})",
        summary.sr_sft, summary.sr_ript, summary.ript_steps, summary.ript_status
    );
    Ok(())
}
