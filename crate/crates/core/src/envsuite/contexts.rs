use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::grid::{self, Cell, GridLayout, GridState};
use super::{point, Context, Demonstration, EnvState, Goal, Split, TaskSpec, World};
use crate::error::{Error, Result};
use crate::rng;

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Test => 1,
    }
}

fn context_id(task: &TaskSpec, split: Split, i: usize) -> String {
    let s = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    format!("{}/t{}/s{}/{s}{i}", task.suite_id, task.task_id, task.scenario_id)
}

/// Draws `n` contexts. Discrete tasks enumerate the split's state class,
/// shuffle it and cycle through it, so contexts are distinct whenever the
/// class is large enough. Continuous tasks draw from split-specific streams.
pub(super) fn sample(seed: u64, task: &TaskSpec, split: Split, n: usize) -> Result<Vec<Context>> {
    let mut r = rng::stream(
        seed,
        &[0x6374_78, task.task_id as u64, task.scenario_id as u64, split_tag(split)],
    );
    let states: Vec<EnvState> = match &task.world {
        World::Grid(layout) => {
            let mut pool: Vec<GridState> = grid::valid_initial_states(layout, &task.goal)
                .into_iter()
                .filter(|s| grid::split_class(s) == split_tag(split))
                .collect();
            if pool.is_empty() {
                return Err(Error::Env(format!(
                    "task {} has no {split:?} initial states",
                    task.task_id
                )));
            }
            pool.shuffle(&mut r);
            (0..n).map(|i| EnvState::Grid(pool[i % pool.len()].clone())).collect()
        }
        World::Point(_) => (0..n).map(|_| point::sample_start(&mut r, &task.goal)).collect(),
        World::Bandit { .. } => vec![EnvState::Bandit; n],
    };
    Ok(states
        .into_iter()
        .enumerate()
        .map(|(i, state)| Context {
            id: context_id(task, split, i),
            task_id: task.task_id,
            scenario_id: task.scenario_id,
            state,
        })
        .collect())
}

/// One context per demonstration, order preserved, exact duplicates dropped.
pub fn extract_contexts(demos: &[Demonstration]) -> Vec<Context> {
    let mut seen = std::collections::HashSet::new();
    demos
        .iter()
        .filter(|d| seen.insert((d.context.task_id, d.context.scenario_id, d.context.state.key())))
        .map(|d| d.context.clone())
        .collect()
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over coordinates of the spread of entity positions across contexts.
pub fn base_position_std(contexts: &[Context]) -> f64 {
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for ctx in contexts {
        for (e, pos) in ctx.state.positions().into_iter().enumerate() {
            for (d, v) in pos.into_iter().enumerate() {
                let k = 2 * e + d;
                if columns.len() <= k {
                    columns.resize(k + 1, Vec::new());
                }
                columns[k].push(v);
            }
        }
    }
    if columns.is_empty() {
        return 0.0;
    }
    columns.iter().map(|c| population_std(c)).sum::<f64>() / columns.len() as f64
}

/// Nearest cell (Manhattan, ties in row-major order) accepted by `ok`.
fn nearest(layout: &GridLayout, from: Cell, ok: impl Fn(Cell) -> bool) -> Option<Cell> {
    layout
        .cells()
        .filter(|&c| ok(c))
        .min_by_key(|&c| (c.manhattan(from), c.row, c.col))
}

fn jitter(x: usize, std: f64, size: usize, r: &mut rng::Rng) -> usize {
    if std == 0.0 {
        return x;
    }
    let noise = Normal::new(0.0, std).expect("finite std").sample(r);
    (x as f64 + noise).round().clamp(0.0, (size - 1) as f64) as usize
}

/// Adds rounded Gaussian noise with standard deviation `scale × base_std` to
/// every entity position, then repairs the state so it stays legal.
pub fn perturb_context(
    task: &TaskSpec,
    context: &Context,
    scale: f64,
    base_std: f64,
    r: &mut rng::Rng,
) -> Result<Context> {
    if scale < 0.0 || !scale.is_finite() {
        return Err(Error::Config(format!("noise scale must be >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(context.clone());
    }
    let std = scale * base_std;
    let state = match (&task.world, &context.state) {
        (World::Grid(layout), EnvState::Grid(s)) => {
            let n = layout.size;
            let agent_ok = |c: Cell| {
                layout.is_floor(c)
                    && match &task.goal {
                        Goal::Reach { target } => c != *target,
                        Goal::Sort { targets } => targets.first() != Some(&c),
                        Goal::KeyDoor { .. } => grid::in_left_room(layout, c),
                        _ => false,
                    }
            };
            let moved = Cell::new(jitter(s.agent.row, std, n, r), jitter(s.agent.col, std, n, r));
            let agent = nearest(layout, moved, agent_ok)
                .ok_or_else(|| Error::Env("no legal cell for the agent".into()))?;
            let key = match s.key {
                Some(k) => {
                    let moved = Cell::new(jitter(k.row, std, n, r), jitter(k.col, std, n, r));
                    let key_ok = |c: Cell| {
                        grid::validate_initial(layout, &task.goal, &GridState {
                            agent,
                            key: Some(c),
                            ..s.clone()
                        })
                        .is_ok()
                    };
                    Some(
                        nearest(layout, moved, key_ok)
                            .ok_or_else(|| Error::Env("no legal cell for the key".into()))?,
                    )
                }
                None => None,
            };
            EnvState::Grid(GridState {
                agent,
                key,
                ..s.clone()
            })
        }
        (World::Point(_), EnvState::Point { position }) => {
            let normal = Normal::new(0.0, std).expect("finite std");
            let p = [
                (position[0] + normal.sample(r)).clamp(0.0, 1.0),
                (position[1] + normal.sample(r)).clamp(0.0, 1.0),
            ];
            EnvState::Point { position: p }
        }
        (World::Bandit { .. }, EnvState::Bandit) => EnvState::Bandit,
        _ => return Err(Error::Env("context does not match the task".into())),
    };
    task.validate_state(&state)?;
    Ok(Context {
        id: format!("{}~p", context.id),
        state,
        ..context.clone()
    })
}
