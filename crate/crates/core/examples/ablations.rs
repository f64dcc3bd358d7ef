//! Post-training ablations from one SFT checkpoint per seed:
//! `dynamic-sampling` (rejection of uninformative groups on vs off),
//! `context-size` (contexts per task), `noise` (initial-state jitter inside
//! a group).
//!
//! cargo run --release --example ablations dynamic-sampling [config.toml]

use std::path::PathBuf;

use posttrain::harness::{ablation_context_size, ablation_dynamic_sampling, ablation_noise, ExperimentConfig};

fn main() -> posttrain::Result<()> {
    let mut args = std::env::args().skip(1);
    let which = args.next().unwrap_or_else(|| "dynamic-sampling".into());
    let default = match which.as_str() {
        "noise" => "pointreach.toml",
        _ => "keydoor8.toml",
    };
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(default));
    let config = ExperimentConfig::load(&path)?;
    let out = config.out_dir.join(format!("ablate_{which}"));
    match which.as_str() {
        "dynamic-sampling" => {
            println!("{:>5} {:>7} {:>7} {:>7} {:>12}", "seed", "sft", "on", "off", "zero-adv off");
            for r in ablation_dynamic_sampling(&config, &out)? {
                println!("{:>5} {:>7.3} {:>7.3} {:>7.3} {:>12}", r.seed, r.sr_sft, r.sr_on, r.sr_off, r.zero_adv_off);
            }
        }
        "context-size" | "noise" => {
            let rows = if which == "noise" {
                ablation_noise(&config, &config.ablation.noise_scales, &out)?
            } else {
                ablation_context_size(&config, &config.ablation.context_sizes, &out)?
            };
            println!("{:>7} {:>7} {:>14}", "value", "sft", "ript");
            for r in rows {
                println!("{:>7} {:>7.3} {:>7.3} ± {:.3}", r.value, r.sft_mean, r.ript_mean, r.ript_std);
            }
        }
        other => eprintln!("unknown ablation `{other}`; use dynamic-sampling, context-size or noise"),
    }
    Ok(())
}
