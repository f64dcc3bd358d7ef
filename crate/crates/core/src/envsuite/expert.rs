use std::collections::{HashMap, VecDeque};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{point, Action, Context, EnvInstance, EnvState, Goal, TaskSpec, World, GRID_ACTIONS};
use crate::error::{Error, Result};
use crate::rng;

/// Suboptimality knobs for the scripted expert. Off by default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Per-step probability of a random detour move (discrete) or of
    /// perturbing the commanded action (continuous).
    pub detour_prob: f64,
    pub seed: u64,
}

/// One expert episode. `observations` has one more entry than `actions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub context: Context,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub success: bool,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Breadth-first shortest action sequence reaching the goal (discrete tasks),
/// or the proportional-controller plan (continuous tasks).
pub fn shortest_solution(task: &TaskSpec, start: &EnvState) -> Result<Vec<Action>> {
    match (&task.world, start) {
        (World::Point(_), EnvState::Point { position }) => controller_plan(task, *position),
        (World::Bandit { .. }, _) => match task.goal {
            Goal::Bandit { winning_arm } => Ok(vec![Action::Token(winning_arm)]),
            _ => Err(Error::Env("bandit task without a bandit goal".into())),
        },
        (World::Grid(_), EnvState::Grid(_)) => bfs(task, start),
        _ => Err(Error::Env("state kind does not match the task".into())),
    }
}

fn bfs(task: &TaskSpec, start: &EnvState) -> Result<Vec<Action>> {
    let mut parents: HashMap<Vec<i64>, Option<(Vec<i64>, usize)>> = HashMap::new();
    let mut queue = VecDeque::new();
    parents.insert(start.key(), None);
    queue.push_back(start.clone());
    while let Some(state) = queue.pop_front() {
        for a in 0..GRID_ACTIONS {
            let (next, done) = task.transition(&state, &Action::Token(a))?;
            let key = next.key();
            if parents.contains_key(&key) {
                continue;
            }
            parents.insert(key.clone(), Some((state.key(), a)));
            if done {
                let mut plan = Vec::new();
                let mut cursor = key;
                while let Some(Some((prev, action))) = parents.get(&cursor) {
                    plan.push(Action::Token(*action));
                    cursor = prev.clone();
                }
                plan.reverse();
                return Ok(plan);
            }
            queue.push_back(next);
        }
    }
    Err(Error::Env(format!(
        "task {} / scenario {} is unsolvable from {start:?}",
        task.task_id, task.scenario_id
    )))
}

fn controller_action(world: &point::PointWorld, target: [f64; 2], p: [f64; 2]) -> Vec<f64> {
    (0..2)
        .map(|i| ((target[i] - p[i] - world.drift[i]) / world.step).clamp(-1.0, 1.0))
        .collect()
}

/// Proportional controller that compensates for the drift.
pub fn controller_plan(task: &TaskSpec, start: [f64; 2]) -> Result<Vec<Action>> {
    let (World::Point(world), Goal::PointReach { target, .. }) = (&task.world, &task.goal) else {
        return Err(Error::Env("controller needs a point task".into()));
    };
    let mut p = start;
    let mut plan = Vec::new();
    for _ in 0..10 * task.horizon.max(10) {
        if point::goal_reached(&task.goal, p) {
            return Ok(plan);
        }
        let a = controller_action(world, *target, p);
        p = world.transition(p, &a)?;
        plan.push(Action::Continuous(a));
    }
    if point::goal_reached(&task.goal, p) {
        return Ok(plan);
    }
    Err(Error::Env(format!("controller failed to reach {target:?} from {start:?}")))
}

/// Rolls the expert out through the environment and records the episode.
pub fn scripted_expert(task: &TaskSpec, context: &Context, config: &ExpertConfig) -> Result<Demonstration> {
    let mut env = EnvInstance::new(task);
    let mut observations = vec![env.reset(context)?];
    let mut actions = Vec::new();
    let mut r = rng::stream(config.seed, &rng_tags(context));
    let mut success = false;
    while !env.is_done() {
        let state = env.state().expect("reset").clone();
        let remaining = task.horizon - env.steps();
        let plan = shortest_solution(task, &state)?;
        let mut action = plan
            .first()
            .cloned()
            .ok_or_else(|| Error::Env("expert asked to act in a goal state".into()))?;
        // Detours only while the remaining budget still covers the plan.
        if config.detour_prob > 0.0 && remaining > plan.len() + 2 && r.random_bool(config.detour_prob) {
            action = match action {
                Action::Token(_) => Action::Token(r.random_range(0..GRID_ACTIONS)),
                Action::Continuous(a) => {
                    Action::Continuous(a.iter().map(|x| x + r.random_range(-0.5..0.5)).collect())
                }
            };
        }
        let out = env.step(&action)?;
        observations.push(out.observation);
        actions.push(action);
        success = out.done && out.reward == 1.0;
    }
    if !success {
        return Err(Error::Env(format!(
            "expert failed on pre-certified context `{}`",
            context.id
        )));
    }
    Ok(Demonstration {
        context: context.clone(),
        observations,
        actions,
        success,
    })
}

fn rng_tags(context: &Context) -> Vec<u64> {
    let mut tags = vec![context.task_id as u64, context.scenario_id as u64];
    tags.extend(context.state.key().into_iter().map(|k| k as u64));
    tags
}
