//! Leave-one-out baselines and advantages for a few reward groups.
//!
//! cargo run --example rloo_table

use posttrain::rloo_ppo::{ppo_surrogate, rloo_advantages};

fn main() -> posttrain::Result<()> {
    let groups: [&[f64]; 5] = [
        &[1.0, 0.0],
        &[1.0, 0.0, 0.0, 0.0],
        &[1.0, 1.0, 1.0, 0.0],
        &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        &[1.0, 1.0, 1.0, 1.0],
    ];
    for rewards in groups {
        let (baselines, advantages) = rloo_advantages(rewards)?;
        println!("rewards    {rewards:?}");
        println!("baselines  {baselines:.3?}");
        println!("advantages {advantages:.3?}  (sum {:+.1e})\n", advantages.iter().sum::<f64>());
    }

    println!("clipped surrogate -min(rA, clip(r)A) with eps = 0.2");
    println!("{:>6} {:>10} {:>10}", "r", "A = +1", "A = -1");
    for r in [0.5, 0.8, 0.9, 1.0, 1.1, 1.2, 1.5] {
        println!("{r:>6.2} {:>10.3} {:>10.3}", ppo_surrogate(r, 1.0, 0.2), ppo_surrogate(r, -1.0, 0.2));
    }
    Ok(())
}
