use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{expert, Family, Goal, SuiteConfig, TaskSpec, World, MAX_GENERATION_ATTEMPTS};
use crate::error::{Error, Result};
use crate::rng;

/// Up, down, left, right.
pub const GRID_ACTIONS: usize = 4;

const MOVES: [(isize, isize); GRID_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const SORT_TARGETS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub size: usize,
    /// Row-major; `true` marks a wall.
    pub walls: Vec<bool>,
    /// A door cell, passable once opened with the key.
    pub door: Option<Cell>,
}

impl GridLayout {
    pub fn open(size: usize) -> Self {
        GridLayout {
            size,
            walls: vec![false; size * size],
            door: None,
        }
    }

    pub fn index(&self, c: Cell) -> usize {
        c.row * self.size + c.col
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls[self.index(c)]
    }

    /// Free of walls and not the door.
    pub fn is_floor(&self, c: Cell) -> bool {
        c.row < self.size && c.col < self.size && !self.is_wall(c) && self.door != Some(c)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.size).flat_map(move |r| (0..self.size).map(move |c| Cell::new(r, c)))
    }

    fn neighbor(&self, c: Cell, action: usize) -> Option<Cell> {
        let (dr, dc) = MOVES[action];
        let r = c.row.checked_add_signed(dr)?;
        let col = c.col.checked_add_signed(dc)?;
        (r < self.size && col < self.size).then_some(Cell::new(r, col))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub agent: Cell,
    /// Key position while it lies on the floor.
    pub key: Option<Cell>,
    pub has_key: bool,
    pub door_open: bool,
    /// Number of ordered targets already visited.
    pub progress: usize,
}

impl GridState {
    pub fn at(agent: Cell) -> Self {
        GridState {
            agent,
            key: None,
            has_key: false,
            door_open: false,
            progress: 0,
        }
    }

    pub fn key(&self) -> Vec<i64> {
        let key = self.key.map_or((-1, -1), |k| (k.row as i64, k.col as i64));
        vec![
            0,
            self.agent.row as i64,
            self.agent.col as i64,
            key.0,
            key.1,
            self.has_key as i64,
            self.door_open as i64,
            self.progress as i64,
        ]
    }
}

pub fn observation_dim(size: usize) -> usize {
    4 * size * size + 2 + 8 + GRID_ACTIONS
}

fn current_target(goal: &Goal, state: &GridState) -> Option<Cell> {
    match goal {
        Goal::Reach { target } | Goal::KeyDoor { target } => Some(*target),
        Goal::Sort { targets } => targets.get(state.progress).copied(),
        _ => None,
    }
}

pub fn goal_reached(goal: &Goal, state: &GridState) -> bool {
    match goal {
        Goal::Reach { target } => state.agent == *target,
        Goal::KeyDoor { target } => state.agent == *target && state.has_key && state.door_open,
        Goal::Sort { targets } => state.progress >= targets.len(),
        _ => false,
    }
}

pub fn transition(layout: &GridLayout, goal: &Goal, state: &GridState, action: usize) -> Result<GridState> {
    if action >= GRID_ACTIONS {
        return Err(Error::Env(format!("grid action {action} out of range")));
    }
    let mut next = state.clone();
    if let Some(cell) = layout.neighbor(state.agent, action) {
        if layout.door == Some(cell) {
            if next.door_open || next.has_key {
                next.door_open = true;
                next.agent = cell;
            }
        } else if !layout.is_wall(cell) {
            next.agent = cell;
        }
    }
    if next.key == Some(next.agent) {
        next.key = None;
        next.has_key = true;
    }
    if let Goal::Sort { targets } = goal {
        if targets.get(next.progress) == Some(&next.agent) {
            next.progress += 1;
        }
    }
    Ok(next)
}

pub fn observe(layout: &GridLayout, goal: &Goal, state: &GridState) -> Vec<f64> {
    let n = layout.size;
    let cells = n * n;
    let mut obs = vec![0.0; observation_dim(n)];
    obs[layout.index(state.agent)] = 1.0;
    for (i, &w) in layout.walls.iter().enumerate() {
        if w {
            obs[cells + i] = 1.0;
        }
    }
    if let Some(door) = layout.door {
        if !state.door_open {
            obs[cells + layout.index(door)] = 1.0;
        }
    }
    if let Some(k) = state.key {
        obs[2 * cells + layout.index(k)] = 1.0;
    }
    let target = current_target(goal, state);
    if let Some(t) = target {
        obs[3 * cells + layout.index(t)] = 1.0;
    }
    let base = 4 * cells;
    obs[base] = state.has_key as u8 as f64;
    obs[base + 1] = state.door_open as u8 as f64;
    let scale = (n - 1) as f64;
    let a = state.agent;
    let offset = |c: Option<Cell>| -> (f64, f64) {
        c.map_or((0.0, 0.0), |c| {
            (
                (c.row as f64 - a.row as f64) / scale,
                (c.col as f64 - a.col as f64) / scale,
            )
        })
    };
    obs[base + 2] = a.row as f64 / scale;
    obs[base + 3] = a.col as f64 / scale;
    let (tr, tc) = offset(target);
    obs[base + 4] = tr;
    obs[base + 5] = tc;
    let (kr, kc) = offset(state.key);
    obs[base + 6] = kr;
    obs[base + 7] = kc;
    let (dr, dc) = offset(layout.door.filter(|_| !state.door_open));
    obs[base + 8] = dr;
    obs[base + 9] = dc;
    // Moves that would leave the agent in place.
    for action in 0..GRID_ACTIONS {
        let blocked = match layout.neighbor(a, action) {
            None => true,
            Some(c) if layout.door == Some(c) => !(state.door_open || state.has_key),
            Some(c) => layout.is_wall(c),
        };
        obs[base + 10 + action] = blocked as u8 as f64;
    }
    obs
}

pub(super) fn in_left_room(layout: &GridLayout, c: Cell) -> bool {
    layout.door.is_none_or(|d| c.col < d.col)
}

pub fn validate_initial(layout: &GridLayout, goal: &Goal, s: &GridState) -> Result<()> {
    let bad = |why: &str| Err(Error::Env(format!("invalid initial state {s:?}: {why}")));
    if !layout.is_floor(s.agent) {
        return bad("agent not on a floor cell");
    }
    if s.progress != 0 || s.door_open {
        return bad("episode progress must start at zero");
    }
    match goal {
        Goal::Reach { target } => {
            if s.agent == *target || s.key.is_some() || s.has_key {
                return bad("reach starts away from the target without a key");
            }
        }
        Goal::KeyDoor { .. } => {
            let Some(key) = s.key else {
                return bad("key must start on the floor");
            };
            if s.has_key || key == s.agent || !layout.is_floor(key) {
                return bad("key overlaps the agent or a wall");
            }
            if !in_left_room(layout, s.agent) || !in_left_room(layout, key) {
                return bad("agent and key must start in front of the door");
            }
        }
        Goal::Sort { targets } => {
            if targets.first() == Some(&s.agent) || s.key.is_some() || s.has_key {
                return bad("sort starts away from the first target");
            }
        }
        _ => return bad("goal is not a grid goal"),
    }
    Ok(())
}

/// Every legal initial state of a task, in row-major enumeration order.
pub fn valid_initial_states(layout: &GridLayout, goal: &Goal) -> Vec<GridState> {
    let floor: Vec<Cell> = layout.cells().filter(|&c| layout.is_floor(c)).collect();
    let mut out = Vec::new();
    match goal {
        Goal::KeyDoor { .. } => {
            for &agent in &floor {
                for &key in &floor {
                    let s = GridState {
                        key: Some(key),
                        ..GridState::at(agent)
                    };
                    if validate_initial(layout, goal, &s).is_ok() {
                        out.push(s);
                    }
                }
            }
        }
        _ => {
            for &agent in &floor {
                let s = GridState::at(agent);
                if validate_initial(layout, goal, &s).is_ok() {
                    out.push(s);
                }
            }
        }
    }
    out
}

/// Train/test class of a state: disjoint halves of the state space.
pub fn split_class(state: &GridState) -> u64 {
    rng::hash_ints(&state.key()) & 1
}

fn random_cell(r: &mut rng::Rng, size: usize) -> Cell {
    Cell::new(r.random_range(0..size), r.random_range(0..size))
}

fn sample_goals(r: &mut rng::Rng, family: Family, size: usize, count: usize) -> Vec<Goal> {
    match family {
        Family::Reach => {
            let mut cells: Vec<Cell> = Vec::new();
            while cells.len() < count {
                let c = random_cell(r, size);
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
            cells.into_iter().map(|target| Goal::Reach { target }).collect()
        }
        Family::KeyDoor => {
            let mut rows: Vec<usize> = Vec::new();
            while rows.len() < count {
                let row = r.random_range(0..size);
                if !rows.contains(&row) {
                    rows.push(row);
                }
            }
            rows.into_iter()
                .map(|row| Goal::KeyDoor {
                    target: Cell::new(row, size - 1),
                })
                .collect()
        }
        Family::Sort => {
            let mut targets: Vec<Cell> = Vec::new();
            while targets.len() < SORT_TARGETS {
                let c = random_cell(r, size);
                if !targets.contains(&c) {
                    targets.push(c);
                }
            }
            let mut goals = vec![Goal::Sort {
                targets: targets.clone(),
            }];
            if count > 1 {
                targets.reverse();
                goals.push(Goal::Sort { targets });
            }
            goals
        }
        _ => unreachable!("grid families only"),
    }
}

fn protected_cells(goal: &Goal) -> Vec<Cell> {
    match goal {
        Goal::Reach { target } | Goal::KeyDoor { target } => vec![*target],
        Goal::Sort { targets } => targets.clone(),
        _ => Vec::new(),
    }
}

fn sample_layout(r: &mut rng::Rng, family: Family, config: &SuiteConfig, goals: &[Goal]) -> GridLayout {
    let n = config.grid_size;
    let mut layout = GridLayout::open(n);
    if family == Family::KeyDoor {
        // Dividing wall with one door; targets live in the last column.
        let wall_col = r.random_range(1..n - 1);
        let door_row = r.random_range(0..n);
        for row in 0..n {
            let c = Cell::new(row, wall_col);
            if row != door_row {
                let i = layout.index(c);
                layout.walls[i] = true;
            }
        }
        layout.door = Some(Cell::new(door_row, wall_col));
    }
    let protected: Vec<Cell> = goals.iter().flat_map(protected_cells).collect();
    for c in layout.cells().collect::<Vec<_>>() {
        let near_door = layout.door.is_some_and(|d| d.manhattan(c) <= 1);
        if protected.contains(&c) || near_door || layout.door == Some(c) {
            continue;
        }
        if r.random_bool(config.wall_density) {
            let i = layout.index(c);
            layout.walls[i] = true;
        }
    }
    layout
}

fn certify(task: &mut TaskSpec) -> Option<()> {
    let World::Grid(layout) = &task.world else {
        return None;
    };
    let states = valid_initial_states(layout, &task.goal);
    let classes = states.iter().fold([0usize; 2], |mut acc, s| {
        acc[split_class(s) as usize] += 1;
        acc
    });
    if classes.iter().any(|&c| c < 2) {
        return None;
    }
    let mut worst = 0;
    for s in &states {
        let plan = expert::shortest_solution(task, &super::EnvState::Grid(s.clone())).ok()?;
        worst = worst.max(plan.len());
    }
    (worst <= task.horizon).then(|| task.certified_worst_case = worst)
}

pub(super) fn generate_group(
    config: &SuiteConfig,
    family: Family,
    ids: &[usize],
) -> Result<Vec<TaskSpec>> {
    'attempt: for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut r = rng::stream(config.seed, &[0x6772_6964, ids[0] as u64, attempt as u64]);
        let goals = sample_goals(&mut r, family, config.grid_size, ids.len());
        let mut layouts: Vec<GridLayout> = Vec::new();
        for _ in 0..config.scenarios {
            let layout = sample_layout(&mut r, family, config, &goals);
            if layouts.contains(&layout) {
                continue 'attempt;
            }
            layouts.push(layout);
        }
        let mut tasks = Vec::new();
        for (&task_id, goal) in ids.iter().zip(&goals) {
            for (scenario_id, layout) in layouts.iter().enumerate() {
                let mut task = TaskSpec {
                    suite_id: config.name.clone(),
                    task_id,
                    scenario_id,
                    family,
                    goal: goal.clone(),
                    world: World::Grid(layout.clone()),
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
        "could not generate a solvable {family:?} layout for task {} within {MAX_GENERATION_ATTEMPTS} attempts",
        ids[0]
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsuite::{Action, Context, EnvInstance, EnvState};

    fn open_task(goal: Goal, layout: GridLayout, horizon: usize) -> TaskSpec {
        TaskSpec {
            suite_id: "t".into(),
            task_id: 0,
            scenario_id: 0,
            family: Family::Reach,
            goal,
            world: World::Grid(layout),
            horizon,
            certified_worst_case: 0,
        }
    }

    fn ctx(state: GridState) -> Context {
        Context {
            id: "c".into(),
            task_id: 0,
            scenario_id: 0,
            state: EnvState::Grid(state),
        }
    }

    #[test]
    fn one_step_reach() {
        let task = open_task(Goal::Reach { target: Cell::new(0, 1) }, GridLayout::open(4), 10);
        let mut env = EnvInstance::new(&task);
        env.reset(&ctx(GridState::at(Cell::new(0, 0)))).unwrap();
        let out = env.step(&Action::Token(3)).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn timeout_gives_zero_reward() {
        let task = open_task(Goal::Reach { target: Cell::new(3, 3) }, GridLayout::open(4), 5);
        let mut env = EnvInstance::new(&task);
        env.reset(&ctx(GridState::at(Cell::new(0, 0)))).unwrap();
        let mut rewards = Vec::new();
        loop {
            // bump into the top wall
            let out = env.step(&Action::Token(0)).unwrap();
            rewards.push(out.reward);
            if out.done {
                break;
            }
        }
        assert_eq!(rewards, vec![0.0; 5]);
    }

    #[test]
    fn keydoor_goal_without_key_is_not_success() {
        // Goal reachable around the door so the predicate itself is exercised.
        let mut layout = GridLayout::open(4);
        layout.door = Some(Cell::new(3, 3));
        let goal = Goal::KeyDoor { target: Cell::new(0, 3) };
        let mut task = open_task(goal.clone(), layout.clone(), 20);
        task.family = Family::KeyDoor;
        let mut env = EnvInstance::new(&task);
        let start = GridState {
            key: Some(Cell::new(2, 0)),
            ..GridState::at(Cell::new(0, 1))
        };
        env.reset(&ctx(start)).unwrap();
        env.step(&Action::Token(3)).unwrap();
        let out = env.step(&Action::Token(3)).unwrap();
        let EnvState::Grid(s) = env.state().unwrap() else { panic!() };
        assert_eq!(s.agent, Cell::new(0, 3));
        assert!(!out.done);
        assert_eq!(out.reward, 0.0);
        assert!(!goal_reached(&goal, s));
    }

    #[test]
    fn door_needs_the_key() {
        let mut layout = GridLayout::open(4);
        for r in 0..4 {
            layout.walls[r * 4 + 2] = r != 1;
        }
        layout.door = Some(Cell::new(1, 2));
        let goal = Goal::KeyDoor { target: Cell::new(1, 3) };
        let s = GridState {
            key: Some(Cell::new(0, 0)),
            ..GridState::at(Cell::new(1, 1))
        };
        let blocked = transition(&layout, &goal, &s, 3).unwrap();
        assert_eq!(blocked.agent, Cell::new(1, 1));
        let with_key = GridState {
            key: None,
            has_key: true,
            ..s
        };
        let through = transition(&layout, &goal, &with_key, 3).unwrap();
        assert_eq!(through.agent, Cell::new(1, 2));
        assert!(through.door_open);
    }

    #[test]
    fn sort_requires_order() {
        let goal = Goal::Sort {
            targets: vec![Cell::new(0, 2), Cell::new(0, 1), Cell::new(0, 3)],
        };
        let layout = GridLayout::open(4);
        let mut s = GridState::at(Cell::new(0, 0));
        // Passing over the second target first does not count.
        s = transition(&layout, &goal, &s, 3).unwrap();
        assert_eq!(s.progress, 0);
        s = transition(&layout, &goal, &s, 3).unwrap();
        assert_eq!(s.progress, 1);
        s = transition(&layout, &goal, &s, 2).unwrap();
        assert_eq!(s.progress, 2);
        s = transition(&layout, &goal, &s, 3).unwrap();
        s = transition(&layout, &goal, &s, 3).unwrap();
        assert!(goal_reached(&goal, &s));
    }

    #[test]
    fn observation_has_fixed_length() {
        let layout = GridLayout::open(5);
        let goal = Goal::Reach { target: Cell::new(4, 4) };
        let obs = observe(&layout, &goal, &GridState::at(Cell::new(0, 0)));
        assert_eq!(obs.len(), observation_dim(5));
        assert_eq!(obs.iter().take(25).sum::<f64>(), 1.0);
    }

    #[test]
    fn blocked_bits_match_transitions() {
        let mut layout = GridLayout::open(5);
        let wall = Cell::new(1, 2);
        let i = layout.index(wall);
        layout.walls[i] = true;
        layout.door = Some(Cell::new(2, 1));
        let goal = Goal::Reach { target: Cell::new(4, 4) };
        for r in 0..5 {
            for c in 0..5 {
                let cell = Cell::new(r, c);
                if !layout.is_floor(cell) {
                    continue;
                }
                for has_key in [false, true] {
                    let s = GridState { has_key, ..GridState::at(cell) };
                    let obs = observe(&layout, &goal, &s);
                    let tail = &obs[obs.len() - GRID_ACTIONS..];
                    for a in 0..GRID_ACTIONS {
                        let stuck = transition(&layout, &goal, &s, a).unwrap().agent == cell;
                        assert_eq!(tail[a] == 1.0, stuck, "{cell:?} action {a} key {has_key}");
                    }
                }
            }
        }
    }
}
