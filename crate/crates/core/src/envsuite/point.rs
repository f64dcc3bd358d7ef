use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{expert, EnvState, Family, Goal, SuiteConfig, TaskSpec, World, MAX_GENERATION_ATTEMPTS};
use crate::error::{Error, Result};
use crate::rng;

/// Position, then offset to the target.
pub const OBSERVATION_DIM: usize = 4;

/// Point mass in the unit square. Each step moves by `step · clip(a, -1, 1)`
/// plus a constant scenario-specific drift; positions are clamped to the arena.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointWorld {
    pub step: f64,
    pub drift: [f64; 2],
}

impl PointWorld {
    pub fn transition(&self, p: [f64; 2], action: &[f64]) -> Result<[f64; 2]> {
        if action.len() != 2 {
            return Err(Error::Env(format!("point action needs 2 dims, got {}", action.len())));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("point action".into()));
        }
        let mut next = [0.0; 2];
        for i in 0..2 {
            next[i] = (p[i] + self.step * action[i].clamp(-1.0, 1.0) + self.drift[i]).clamp(0.0, 1.0);
        }
        Ok(next)
    }
}

pub fn goal_reached(goal: &Goal, p: [f64; 2]) -> bool {
    match goal {
        Goal::PointReach { target, radius } => distance(p, *target) <= *radius,
        _ => false,
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn observe(goal: &Goal, p: [f64; 2]) -> Vec<f64> {
    let target = match goal {
        Goal::PointReach { target, .. } => *target,
        _ => p,
    };
    vec![p[0], p[1], target[0] - p[0], target[1] - p[1]]
}

fn certify(task: &mut TaskSpec) -> Option<()> {
    let mut worst = 0;
    for i in 0..=10 {
        for j in 0..=10 {
            let start = [i as f64 / 10.0, j as f64 / 10.0];
            if goal_reached(&task.goal, start) {
                continue;
            }
            let demo = expert::controller_plan(task, start).ok()?;
            worst = worst.max(demo.len());
        }
    }
    (worst <= task.horizon).then(|| task.certified_worst_case = worst)
}

pub(super) fn generate_group(config: &SuiteConfig, ids: &[usize]) -> Result<Vec<TaskSpec>> {
    'attempt: for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut r = rng::stream(config.seed, &[0x706f_696e, ids[0] as u64, attempt as u64]);
        let mut targets: Vec<[f64; 2]> = Vec::new();
        while targets.len() < ids.len() {
            let t = [r.random_range(0.2..0.8), r.random_range(0.2..0.8)];
            if targets.iter().all(|&u| distance(t, u) > 0.3) {
                targets.push(t);
            }
        }
        let worlds: Vec<PointWorld> = (0..config.scenarios)
            .map(|_| {
                let angle = r.random_range(0.0..std::f64::consts::TAU);
                let magnitude = r.random_range(0.0..=config.point_max_drift);
                PointWorld {
                    step: config.point_step,
                    drift: [magnitude * angle.cos(), magnitude * angle.sin()],
                }
            })
            .collect();
        let mut tasks = Vec::new();
        for (&task_id, &target) in ids.iter().zip(&targets) {
            for (scenario_id, world) in worlds.iter().enumerate() {
                let mut task = TaskSpec {
                    suite_id: config.name.clone(),
                    task_id,
                    scenario_id,
                    family: Family::PointReach,
                    goal: Goal::PointReach {
                        target,
                        radius: config.point_radius,
                    },
                    world: World::Point(world.clone()),
                    horizon: config.horizon,
                    certified_worst_case: 0,
                };
                if certify(&mut task).is_none() {
                    continue 'attempt;
                }
                tasks.push(task);
            }
        }
        return Ok(tasks);
    }
    Err(Error::Env(format!(
        "could not certify point task {} within {MAX_GENERATION_ATTEMPTS} attempts",
        ids[0]
    )))
}

/// A uniformly drawn start at least two radii away from the target.
pub(super) fn sample_start(r: &mut rng::Rng, goal: &Goal) -> EnvState {
    let (target, radius) = match goal {
        Goal::PointReach { target, radius } => (*target, *radius),
        _ => ([0.5, 0.5], 0.0),
    };
    loop {
        let p = [r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
        if distance(p, target) > 2.0 * radius {
            return EnvState::Point { position: p };
        }
    }
}
