//! Generates a small KEYDOOR suite, draws one task and replays the scripted
//! expert on a training context.
//!
//! cargo run --example suite_tour

use posttrain::envsuite::{
    make_suite, scripted_expert, shortest_solution, EnvInstance, EnvState, ExpertConfig, Family, Split, SuiteConfig,
    World,
};

fn main() -> posttrain::Result<()> {
    let suite = make_suite(&SuiteConfig {
        seed: 7,
        n_tasks: 3,
        grid_size: 7,
        horizon: 30,
        scenarios: 2,
        families: vec![Family::KeyDoor],
        ..SuiteConfig::default()
    })?;
    let ctx = &suite.contexts(0, 1, Split::Train, 1)?[0];
    let task = suite.task_for(ctx)?;
    println!("task {} / scenario {}: {:?}, time limit {}", task.task_id, task.scenario_id, task.goal, task.horizon);

    if let (World::Grid(layout), EnvState::Grid(state)) = (&task.world, &ctx.state) {
        for row in 0..layout.size {
            let line: String = (0..layout.size)
                .map(|col| {
                    let c = posttrain::envsuite::Cell::new(row, col);
                    if c == state.agent {
                        'A'
                    } else if Some(c) == state.key {
                        'k'
                    } else if Some(c) == layout.door {
                        'D'
                    } else if layout.is_wall(c) {
                        '#'
                    } else {
                        '.'
                    }
                })
                .collect();
            println!("  {line}");
        }
    }

    let demo = scripted_expert(task, ctx, &ExpertConfig::default())?;
    println!("expert: {} steps (shortest {})", demo.len(), shortest_solution(task, &ctx.state)?.len());
    let mut env = EnvInstance::new(task);
    env.reset(ctx)?;
    for a in &demo.actions {
        let out = env.step(a)?;
        if out.done {
            println!("done after {} steps, reward {}", env.steps(), out.reward);
        }
    }
    println!("observation width {}", suite.observation_dim());
    Ok(())
}
