use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use posttrain::envsuite::{read_demos, write_demos};
use posttrain::harness::{
    ablation_context_size, ablation_dynamic_sampling, ablation_noise, few_shot_sweep, generate_demos, load_policy,
    run_all_seeds, transfer_experiment, write_json, ExperimentConfig, Run, TransferMode,
};
use posttrain::policy::fit_scale_head;
use posttrain::Result;

/// Pretrain, fine-tune and post-train small policies on the synthetic suites.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write expert demonstrations for pretraining and SFT.
    GenDemos,
    /// Stage 1: imitation pretraining from a fresh policy.
    Pretrain,
    /// Fit the regression scale head on the SFT demonstrations.
    FitScale {
        #[arg(long, default_value = "sft.ckpt")]
        policy: String,
    },
    /// Stage 2: supervised fine-tuning.
    Sft {
        /// Starting checkpoint in the output directory; a fresh policy if absent.
        #[arg(long, default_value = "pretrain.ckpt")]
        policy: String,
        /// Demonstrations per task; overrides `data.sft_shots`.
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Stage 3: post-training with sparse rewards.
    Ript {
        #[arg(long, default_value = "sft.ckpt")]
        policy: String,
    },
    /// Greedy evaluation on the held-out contexts.
    Eval {
        #[arg(long, default_value = "ript.ckpt")]
        policy: String,
    },
    /// Full pipeline over every seed, a few-shot sweep, or a transfer study.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepKind::Seeds)]
        kind: SweepKind,
    },
    /// Post-training ablations from a shared SFT checkpoint per seed.
    Ablate {
        #[arg(long, value_enum)]
        kind: AblationKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Seeds,
    FewShot,
    CrossScenario,
    CrossGoal,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    DynamicSampling,
    ContextSize,
    Noise,
}

fn checkpoint_tag(name: &str) -> &str {
    name.strip_suffix(".ckpt").unwrap_or(name)
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| config.out_dir.clone());
    let stage = || Run::new(&config, cli.seed, &out);
    let load = |run: &Run, name: &str| load_policy(&run.path(name));
    match cli.command {
        Command::GenDemos => {
            let run = stage()?;
            let data = &run.config.data;
            if data.pretrain_per_task > 0 {
                let tasks = if data.pretrain_tasks.is_empty() {
                    run.suite.task_ids()
                } else {
                    data.pretrain_tasks.clone()
                };
                let demos = generate_demos(&run.suite, data.pretrain_scenario, &tasks, data.pretrain_per_task, &data.expert)?;
                write_demos(&run.path("demos_pretrain.jsonl"), &demos)?;
                println!("{} pretraining demos", demos.len());
            }
            let demos = run.sft_demos(data.sft_shots)?;
            write_demos(&run.path("demos_sft.jsonl"), &demos)?;
            println!("{} SFT demos in {}", demos.len(), out.display());
        }
        Command::Pretrain => {
            let run = stage()?;
            let mut policy = run.init_policy()?;
            match run.pretrain(&mut policy)? {
                Some(log) => println!("pretrained for {} steps", log.records.len()),
                None => {
                    run.save_policy(&policy, "pretrain")?;
                    println!("no pretraining data configured; saved the initial policy");
                }
            }
            println!("sr_pretrain {:.4}", run.evaluate(&policy, "pretrain")?.mean_sr);
        }
        Command::FitScale { policy } => {
            let run = stage()?;
            let mut p = load(&run, &policy)?;
            let demos = read_demos(&run.path("demos_sft.jsonl"))?;
            let cfg = run.config.scale_fit.clone().unwrap_or_default();
            let fit = fit_scale_head(&mut p, &demos, cfg.steps, cfg.lr)?;
            run.save_policy(&p, checkpoint_tag(&policy))?;
            write_json(&run.path("scale_fit.json"), &fit.losses)?;
            println!("scale-head nll {:.4}", fit.losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Sft { policy, shots } => {
            let run = stage()?;
            let mut p = if run.path(&policy).exists() {
                load(&run, &policy)?
            } else {
                run.init_policy()?
            };
            let demos = run.sft_demos(shots.or(run.config.data.sft_shots))?;
            run.sft(&mut p, &demos, "sft")?;
            println!("sr_sft {:.4}", run.evaluate(&p, "sft")?.mean_sr);
        }
        Command::Ript { policy } => {
            let run = stage()?;
            let mut p = load(&run, &policy)?;
            let demos = read_demos(&run.path("demos_sft.jsonl"))?;
            let contexts = run.contexts(&demos, run.config.data.extra_contexts_per_task)?;
            let outcome = run.ript(&mut p, &contexts, &run.config.ript, "ript")?;
            println!("{} steps, status {:?}", outcome.metrics.len(), outcome.status);
            println!("sr_ript {:.4}", run.evaluate(&p, "ript")?.mean_sr);
        }
        Command::Eval { policy } => {
            let run = stage()?;
            let p = load(&run, &policy)?;
            let report = run.evaluate(&p, checkpoint_tag(&policy))?;
            for t in &report.per_task {
                println!("task {:>3}  sr {:.4}  ({}/{})", t.task_id, t.sr, t.successes, t.episodes);
            }
            println!("mean sr {:.4}", report.mean_sr);
        }
        Command::Sweep { kind } => match kind {
            SweepKind::Seeds => {
                for s in run_all_seeds(&config, &out)? {
                    println!("seed {}: sft {:.4} -> ript {:.4}", s.seed, s.sr_sft, s.sr_ript);
                }
            }
            SweepKind::FewShot => {
                for r in few_shot_sweep(&config, &config.shots, &out)? {
                    println!("{:>3} shots: sft {:.4} -> ript {:.4}", r.shots, r.sft_mean, r.ript_mean);
                }
            }
            SweepKind::CrossScenario | SweepKind::CrossGoal => {
                let mode = match kind {
                    SweepKind::CrossGoal => TransferMode::CrossGoal,
                    _ => TransferMode::CrossScenario,
                };
                for r in transfer_experiment(&config, mode, &config.shots, &out)? {
                    println!("{:>3} shots: sft {:.4} -> ript {:.4}", r.shots, r.sft_mean, r.ript_mean);
                }
            }
        },
        Command::Ablate { kind } => match kind {
            AblationKind::DynamicSampling => {
                for r in ablation_dynamic_sampling(&config, &out)? {
                    println!("seed {}: rejection on {:.4}, off {:.4}", r.seed, r.sr_on, r.sr_off);
                }
            }
            AblationKind::ContextSize => print_sweep(&ablation_context_size(&config, &config.ablation.context_sizes, &out)?),
            AblationKind::Noise => print_sweep(&ablation_noise(&config, &config.ablation.noise_scales, &out)?),
        },
    }
    Ok(())
}

fn print_sweep(rows: &[posttrain::harness::SweepRow]) {
    for r in rows {
        println!("{:>6}: sft {:.4} -> ript {:.4} ± {:.4}", r.value, r.sft_mean, r.ript_mean, r.ript_std);
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
