//! Procedurally generated multitask environments with sparse binary
//! terminal rewards, scripted experts and context-dataset utilities.
//!
//! Four families are generated by [`make_suite`]: grid navigation to a goal
//! cell (`Reach`), key → door → goal (`KeyDoor`), ordered target visiting
//! (`Sort`), and a continuous 2-D point mass (`PointReach`). A one-step
//! multi-armed task ([`Suite::bandit`]) is available for constructed tests.
//! Dynamics are deterministic; all randomness in an episode comes from the
//! policy.

mod contexts;
mod expert;
mod grid;
mod io;
mod point;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use contexts::{base_position_std, extract_contexts, perturb_context};
pub use expert::{scripted_expert, shortest_solution, Demonstration, ExpertConfig};
pub use grid::{Cell, GridLayout, GridState, GRID_ACTIONS};
pub use io::{load_suite, read_demos, save_suite, write_demos, DemoRecord};
pub use point::PointWorld;

/// Maximum regeneration attempts before [`make_suite`] gives up on a task.
pub const MAX_GENERATION_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Reach,
    KeyDoor,
    Sort,
    PointReach,
    Bandit,
}

impl Family {
    pub fn is_discrete(self) -> bool {
        !matches!(self, Family::PointReach)
    }
}

/// How tasks relate to each other inside a suite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Every task has its own goal and layouts.
    #[default]
    Independent,
    /// Tasks `2i` and `2i + 1` share every layout but have different goals.
    CrossGoal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Token(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn token(&self) -> Option<usize> {
        match self {
            Action::Token(t) => Some(*t),
            Action::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(v) => Some(v),
            Action::Token(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(usize),
}

impl ActionSpace {
    pub fn dim(self) -> usize {
        match self {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    Reach { target: Cell },
    KeyDoor { target: Cell },
    Sort { targets: Vec<Cell> },
    PointReach { target: [f64; 2], radius: f64 },
    Bandit { winning_arm: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum World {
    Grid(GridLayout),
    Point(PointWorld),
    Bandit { arms: usize },
}

/// Full environment state; observations are a deterministic function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvState {
    Grid(GridState),
    Point { position: [f64; 2] },
    Bandit,
}

impl EnvState {
    /// Integer key identifying the state exactly (floats by bit pattern).
    pub fn key(&self) -> Vec<i64> {
        match self {
            EnvState::Grid(s) => s.key(),
            EnvState::Point { position } => {
                vec![1, position[0].to_bits() as i64, position[1].to_bits() as i64]
            }
            EnvState::Bandit => vec![2],
        }
    }

    /// Positions of movable entities (agent first), as float coordinates.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        match self {
            EnvState::Grid(s) => {
                let mut out = vec![[s.agent.row as f64, s.agent.col as f64]];
                if let Some(k) = s.key {
                    out.push([k.row as f64, k.col as f64]);
                }
                out
            }
            EnvState::Point { position } => vec![*position],
            EnvState::Bandit => Vec::new(),
        }
    }
}

/// One (task, scenario) variant: dynamics, goal predicate and time limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub suite_id: String,
    pub task_id: usize,
    pub scenario_id: usize,
    pub family: Family,
    pub goal: Goal,
    pub world: World,
    pub horizon: usize,
    /// Longest oracle solution over every valid initial state.
    pub certified_worst_case: usize,
}

impl TaskSpec {
    /// A one-step task with `arms` actions where only `winning_arm` succeeds.
    pub fn bandit(arms: usize, winning_arm: usize) -> Result<Self> {
        if arms < 2 || winning_arm >= arms {
            return Err(Error::Config(format!(
                "bandit needs >= 2 arms and a valid winner, got {arms} / {winning_arm}"
            )));
        }
        Ok(TaskSpec {
            suite_id: "bandit".into(),
            task_id: 0,
            scenario_id: 0,
            family: Family::Bandit,
            goal: Goal::Bandit { winning_arm },
            world: World::Bandit { arms },
            horizon: 1,
            certified_worst_case: 1,
        })
    }

    pub fn action_space(&self) -> ActionSpace {
        match &self.world {
            World::Grid(_) => ActionSpace::Discrete(GRID_ACTIONS),
            World::Point(_) => ActionSpace::Continuous(2),
            World::Bandit { arms } => ActionSpace::Discrete(*arms),
        }
    }

    pub fn observation_dim(&self) -> usize {
        match &self.world {
            World::Grid(l) => grid::observation_dim(l.size),
            World::Point(_) => point::OBSERVATION_DIM,
            World::Bandit { .. } => 1,
        }
    }

    /// Whether `state` is a legal initial state for this task.
    pub fn validate_state(&self, state: &EnvState) -> Result<()> {
        match (&self.world, state) {
            (World::Grid(layout), EnvState::Grid(s)) => grid::validate_initial(layout, &self.goal, s),
            (World::Point(_), EnvState::Point { position }) => {
                if position.iter().all(|p| (0.0..=1.0).contains(p)) {
                    Ok(())
                } else {
                    Err(Error::Env(format!("point {position:?} outside the arena")))
                }
            }
            (World::Bandit { .. }, EnvState::Bandit) => Ok(()),
            _ => Err(Error::Env("state kind does not match the task".into())),
        }
    }

    /// Deterministic transition. Returns the next state and whether the goal
    /// predicate holds after the move.
    pub fn transition(&self, state: &EnvState, action: &Action) -> Result<(EnvState, bool)> {
        match (&self.world, state) {
            (World::Grid(layout), EnvState::Grid(s)) => {
                let token = action
                    .token()
                    .ok_or_else(|| Error::Env("grid tasks take discrete actions".into()))?;
                let next = grid::transition(layout, &self.goal, s, token)?;
                let done = grid::goal_reached(&self.goal, &next);
                Ok((EnvState::Grid(next), done))
            }
            (World::Point(world), EnvState::Point { position }) => {
                let a = action
                    .continuous()
                    .ok_or_else(|| Error::Env("point tasks take continuous actions".into()))?;
                let next = world.transition(*position, a)?;
                let done = point::goal_reached(&self.goal, next);
                Ok((EnvState::Point { position: next }, done))
            }
            (World::Bandit { arms }, EnvState::Bandit) => {
                let token = action
                    .token()
                    .ok_or_else(|| Error::Env("bandit takes discrete actions".into()))?;
                if token >= *arms {
                    return Err(Error::Env(format!("arm {token} of {arms}")));
                }
                let won = matches!(self.goal, Goal::Bandit { winning_arm } if winning_arm == token);
                Ok((EnvState::Bandit, won))
            }
            _ => Err(Error::Env("state kind does not match the task".into())),
        }
    }

    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        match (&self.world, state) {
            (World::Grid(layout), EnvState::Grid(s)) => grid::observe(layout, &self.goal, s),
            (World::Point(_), EnvState::Point { position }) => point::observe(&self.goal, *position),
            _ => vec![1.0],
        }
    }
}

/// Initial state plus the task it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: String,
    pub task_id: usize,
    pub scenario_id: usize,
    pub state: EnvState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub name: String,
    pub seed: u64,
    pub n_tasks: usize,
    pub grid_size: usize,
    pub horizon: usize,
    /// When set, each task's time limit is tightened to its certified
    /// worst-case solution length plus this many steps (never above `horizon`).
    pub horizon_slack: Option<usize>,
    pub scenarios: usize,
    pub families: Vec<Family>,
    pub pairing: Pairing,
    /// Fraction of grid cells turned into interior walls.
    pub wall_density: f64,
    pub point_radius: f64,
    pub point_step: f64,
    pub point_max_drift: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            name: "suite".into(),
            seed: 0,
            n_tasks: 4,
            grid_size: 6,
            horizon: 40,
            horizon_slack: None,
            scenarios: 1,
            families: vec![Family::Reach, Family::KeyDoor, Family::Sort],
            pairing: Pairing::Independent,
            wall_density: 0.12,
            point_radius: 0.06,
            point_step: 0.1,
            point_max_drift: 0.03,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::Config("n_tasks must be >= 1".into()));
        }
        if self.grid_size < 4 {
            return Err(Error::Config("grid_size must be >= 4".into()));
        }
        if self.scenarios == 0 || self.horizon == 0 {
            return Err(Error::Config("scenarios and horizon must be >= 1".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("at least one family is required".into()));
        }
        if self.families.contains(&Family::Bandit) {
            return Err(Error::Config("bandit tasks are constructed, not generated".into()));
        }
        let discrete = self.families[0].is_discrete();
        if self.families.iter().any(|f| f.is_discrete() != discrete) {
            return Err(Error::Config(
                "a suite cannot mix discrete and continuous families".into(),
            ));
        }
        if self.pairing == Pairing::CrossGoal && self.n_tasks % 2 != 0 {
            return Err(Error::Config("cross-goal pairing needs an even n_tasks".into()));
        }
        if !(0.0..0.5).contains(&self.wall_density) {
            return Err(Error::Config("wall_density must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// A generated collection of task variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub config: SuiteConfig,
    pub tasks: Vec<TaskSpec>,
}

/// Generates `n_tasks × scenarios` certified-solvable task variants.
pub fn make_suite(config: &SuiteConfig) -> Result<Suite> {
    config.validate()?;
    let mut tasks = Vec::with_capacity(config.n_tasks * config.scenarios);
    let group = match config.pairing {
        Pairing::Independent => 1,
        Pairing::CrossGoal => 2,
    };
    let mut first = 0;
    while first < config.n_tasks {
        let family = config.families[(first / group) % config.families.len()];
        let ids: Vec<usize> = (first..first + group).collect();
        let generated = match family {
            Family::PointReach => point::generate_group(config, &ids)?,
            _ => grid::generate_group(config, family, &ids)?,
        };
        tasks.extend(generated);
        first += group;
    }
    if let Some(slack) = config.horizon_slack {
        for t in &mut tasks {
            t.horizon = t.horizon.min(t.certified_worst_case + slack);
        }
    }
    tasks.sort_by_key(|t| (t.task_id, t.scenario_id));
    Ok(Suite {
        config: config.clone(),
        tasks,
    })
}

impl Suite {
    /// A single-task suite holding a constructed bandit.
    pub fn bandit(arms: usize, winning_arm: usize) -> Result<Self> {
        Ok(Suite {
            config: SuiteConfig {
                name: "bandit".into(),
                n_tasks: 1,
                horizon: 1,
                families: vec![Family::Bandit],
                ..SuiteConfig::default()
            },
            tasks: vec![TaskSpec::bandit(arms, winning_arm)?],
        })
    }

    pub fn id(&self) -> &str {
        &self.config.name
    }

    pub fn n_goals(&self) -> usize {
        self.config.n_tasks
    }

    pub fn task(&self, task_id: usize, scenario_id: usize) -> Option<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id && t.scenario_id == scenario_id)
    }

    pub fn task_for(&self, context: &Context) -> Result<&TaskSpec> {
        self.task(context.task_id, context.scenario_id).ok_or_else(|| {
            Error::Env(format!(
                "context `{}` refers to unknown task {} / scenario {}",
                context.id, context.task_id, context.scenario_id
            ))
        })
    }

    pub fn action_space(&self) -> ActionSpace {
        self.tasks[0].action_space()
    }

    pub fn observation_dim(&self) -> usize {
        self.tasks[0].observation_dim()
    }

    /// Distinct task ids, ascending.
    pub fn task_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.tasks.iter().map(|t| t.task_id).collect();
        ids.dedup();
        ids
    }

    /// `n` contexts for one task variant from the given split. Train and test
    /// contexts are drawn from disjoint state classes, so they never coincide.
    pub fn contexts(
        &self,
        task_id: usize,
        scenario_id: usize,
        split: Split,
        n: usize,
    ) -> Result<Vec<Context>> {
        let task = self
            .task(task_id, scenario_id)
            .ok_or_else(|| Error::Env(format!("no task {task_id} / scenario {scenario_id}")))?;
        contexts::sample(self.config.seed, task, split, n)
    }

    /// Contexts for every task variant of one scenario, task-major order.
    pub fn contexts_for_scenario(
        &self,
        scenario_id: usize,
        split: Split,
        per_task: usize,
    ) -> Result<Vec<Context>> {
        let mut out = Vec::new();
        for id in self.task_ids() {
            out.extend(self.contexts(id, scenario_id, split, per_task)?);
        }
        Ok(out)
    }
}

/// Live episode over one task variant. Single owner; cheap to create.
#[derive(Clone, Debug)]
pub struct EnvInstance<'a> {
    task: &'a TaskSpec,
    state: Option<EnvState>,
    steps: usize,
    done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub done: bool,
    /// 0 or 1; only meaningful when `done`.
    pub reward: f64,
}

impl<'a> EnvInstance<'a> {
    pub fn new(task: &'a TaskSpec) -> Self {
        EnvInstance {
            task,
            state: None,
            steps: 0,
            done: false,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        self.task
    }

    pub fn reset(&mut self, context: &Context) -> Result<Vec<f64>> {
        if context.task_id != self.task.task_id || context.scenario_id != self.task.scenario_id {
            return Err(Error::Env(format!(
                "context `{}` belongs to task {} / scenario {}, not {} / {}",
                context.id,
                context.task_id,
                context.scenario_id,
                self.task.task_id,
                self.task.scenario_id
            )));
        }
        self.task.validate_state(&context.state)?;
        self.state = Some(context.state.clone());
        self.steps = 0;
        self.done = false;
        Ok(self.task.observe(&context.state))
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Env("step() after the episode terminated".into()));
        }
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::Env("step() before reset()".into()))?;
        let (next, success) = self.task.transition(state, action)?;
        self.steps += 1;
        let observation = self.task.observe(&next);
        self.state = Some(next);
        self.done = success || self.steps >= self.task.horizon;
        Ok(StepOutcome {
            observation,
            done: self.done,
            reward: if success { 1.0 } else { 0.0 },
        })
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SuiteConfig {
        SuiteConfig {
            seed: 11,
            n_tasks: 8,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn suite_is_deterministic_and_distinct() {
        let a = make_suite(&small_config()).unwrap();
        let b = make_suite(&small_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tasks.len(), 8);
        for (i, t) in a.tasks.iter().enumerate() {
            for u in &a.tasks[i + 1..] {
                assert!(t.goal != u.goal || t.world != u.world);
            }
            assert!(t.certified_worst_case <= t.horizon);
        }
    }

    #[test]
    fn horizon_slack_tightens_time_limits() {
        let base = make_suite(&small_config()).unwrap();
        let tight = make_suite(&SuiteConfig {
            horizon_slack: Some(2),
            ..small_config()
        })
        .unwrap();
        for (a, b) in base.tasks.iter().zip(&tight.tasks) {
            assert_eq!((&a.goal, &a.world), (&b.goal, &b.world));
            assert_eq!(b.horizon, a.horizon.min(a.certified_worst_case + 2));
            assert!(b.certified_worst_case <= b.horizon);
        }
    }

    #[test]
    fn every_task_is_oracle_solvable_from_sampled_contexts() {
        let suite = make_suite(&small_config()).unwrap();
        for task in &suite.tasks {
            for split in [Split::Train, Split::Test] {
                for ctx in suite.contexts(task.task_id, 0, split, 10).unwrap() {
                    let plan = shortest_solution(task, &ctx.state).unwrap();
                    assert!(plan.len() <= task.horizon);
                }
            }
        }
    }

    #[test]
    fn scenarios_share_goal_and_differ_in_layout() {
        let cfg = SuiteConfig {
            scenarios: 2,
            ..small_config()
        };
        let suite = make_suite(&cfg).unwrap();
        assert_eq!(suite.tasks.len(), 16);
        for id in suite.task_ids() {
            let a = suite.task(id, 0).unwrap();
            let b = suite.task(id, 1).unwrap();
            assert_eq!(a.goal, b.goal);
            assert_ne!(a.world, b.world);
        }
    }

    #[test]
    fn cross_goal_pairs_share_layout() {
        let cfg = SuiteConfig {
            pairing: Pairing::CrossGoal,
            ..small_config()
        };
        let suite = make_suite(&cfg).unwrap();
        for pair in suite.task_ids().chunks(2) {
            let a = suite.task(pair[0], 0).unwrap();
            let b = suite.task(pair[1], 0).unwrap();
            assert_eq!(a.world, b.world);
            assert_ne!(a.goal, b.goal);
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        for cfg in [
            SuiteConfig { n_tasks: 0, ..SuiteConfig::default() },
            SuiteConfig { grid_size: 3, ..SuiteConfig::default() },
            SuiteConfig {
                families: vec![Family::Reach, Family::PointReach],
                ..SuiteConfig::default()
            },
        ] {
            assert!(make_suite(&cfg).is_err());
        }
    }

    #[test]
    fn reset_rejects_foreign_context_and_restarts_cleanly() {
        let suite = make_suite(&small_config()).unwrap();
        let ctx = suite.contexts(0, 0, Split::Train, 1).unwrap().remove(0);
        let other = suite.task(1, 0).unwrap();
        assert!(EnvInstance::new(other).reset(&ctx).is_err());

        let task = suite.task(0, 0).unwrap();
        let mut env = EnvInstance::new(task);
        let first = env.reset(&ctx).unwrap();
        assert_eq!(env.state(), Some(&ctx.state));
        while !env.step(&Action::Token(0)).unwrap().done {}
        assert!(env.step(&Action::Token(0)).is_err());
        let again = env.reset(&ctx).unwrap();
        assert_eq!(first, again);
        assert_eq!(env.steps(), 0);
        assert!(!env.is_done());
    }

    #[test]
    fn bandit_pays_only_the_winning_arm() {
        let task = TaskSpec::bandit(2, 0).unwrap();
        let ctx = Context {
            id: "b".into(),
            task_id: 0,
            scenario_id: 0,
            state: EnvState::Bandit,
        };
        for (arm, reward) in [(0, 1.0), (1, 0.0)] {
            let mut env = EnvInstance::new(&task);
            env.reset(&ctx).unwrap();
            let out = env.step(&Action::Token(arm)).unwrap();
            assert!(out.done);
            assert_eq!(out.reward, reward);
        }
    }
}
