//! Deterministic goal-reaching environments on the unit square.
//!
//! Two variants are provided: `reach` (move the agent onto the goal) and
//! `push` (move an object onto the goal by pushing it). Stepping never
//! returns a reward; task completion is only observable through
//! [`is_success`], which is reserved for evaluation and dataset labelling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation dimensionality in vector mode.
pub const VECTOR_OBS_DIM: usize = 8;

const MAX_RESET_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Reach,
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    Vector,
    Pixel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub variant: Variant,
    pub horizon: usize,
    pub goal_tolerance: f64,
    /// Displacement per move action.
    pub step_size: f64,
    pub seed: u64,
    pub observation_mode: ObservationMode,
    /// Side length of the occupancy grid in pixel mode.
    pub grid_size: usize,
    /// Pins the goal for every episode (single-task setting); random otherwise.
    pub fixed_goal: Option<[f64; 2]>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Reach,
            horizon: 64,
            goal_tolerance: 0.07,
            step_size: 0.05,
            seed: 0,
            observation_mode: ObservationMode::Vector,
            grid_size: 16,
            fixed_goal: None,
        }
    }
}

impl EnvConfig {
    pub fn reach(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Push needs to walk behind the object before pushing, so its default
    /// horizon is longer than reach's.
    pub fn push(seed: u64) -> Self {
        Self {
            variant: Variant::Push,
            horizon: 100,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidConfig(format!(
                "horizon must be >= 2, got {}",
                self.horizon
            )));
        }
        if !(self.goal_tolerance > 0.0 && self.goal_tolerance < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "goal_tolerance must lie in (0, 0.5), got {}",
                self.goal_tolerance
            )));
        }
        if !(self.step_size > 0.0 && self.step_size <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "step_size must lie in (0, 0.5], got {}",
                self.step_size
            )));
        }
        if self.variant == Variant::Push {
            let cells = 1.0 / self.step_size;
            if (cells - cells.round()).abs() > 1e-9 || cells.round() < 5.0 {
                return Err(Error::InvalidConfig(
                    "push requires 1/step_size to be an integer >= 5".into(),
                ));
            }
        }
        if self.observation_mode == ObservationMode::Pixel && self.grid_size < 2 {
            return Err(Error::InvalidConfig("grid_size must be >= 2".into()));
        }
        if let Some(goal) = self.fixed_goal {
            if goal.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidConfig(format!(
                    "fixed_goal {goal:?} outside the unit square"
                )));
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        match self.observation_mode {
            ObservationMode::Vector => VECTOR_OBS_DIM,
            ObservationMode::Pixel => self.grid_size * self.grid_size,
        }
    }

    fn lattice_cells(&self) -> i64 {
        (1.0 / self.step_size).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_position: [f64; 2],
    /// Only meaningful for the push variant.
    pub object_position: Option<[f64; 2]>,
    pub goal_position: [f64; 2],
    pub step_count: usize,
}

/// One rendered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f32>);

impl Observation {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    PlusX = 0,
    MinusX = 1,
    PlusY = 2,
    MinusY = 3,
    NoOp = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::PlusX,
        Action::MinusX,
        Action::PlusY,
        Action::MinusY,
        Action::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or_else(|| {
            Error::ContractViolation(format!("action index {index} out of range 0..5"))
        })
    }

    /// Unit direction of the move.
    pub fn direction(self) -> [f64; 2] {
        match self {
            Action::PlusX => [1.0, 0.0],
            Action::MinusX => [-1.0, 0.0],
            Action::PlusY => [0.0, 1.0],
            Action::MinusY => [0.0, -1.0],
            Action::NoOp => [0.0, 0.0],
        }
    }

    fn along(axis: usize, positive: bool) -> Self {
        match (axis, positive) {
            (0, true) => Action::PlusX,
            (0, false) => Action::MinusX,
            (_, true) => Action::PlusY,
            (_, false) => Action::MinusY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Observation,
    pub done: bool,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clip_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

fn snap(p: [f64; 2], step: f64) -> [f64; 2] {
    clip_unit([(p[0] / step).round() * step, (p[1] / step).round() * step])
}

/// Mixes the environment seed with the per-episode seed.
fn episode_rng(config: &EnvConfig, episode_seed: u64) -> ChaCha8Rng {
    let mixed = config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .rotate_left(17)
        ^ episode_seed.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Samples an initial state; positions are pairwise at least
/// `2 * goal_tolerance` apart.
pub fn reset(config: &EnvConfig, episode_seed: u64) -> Result<(EnvState, Observation)> {
    config.validate()?;
    let mut rng = episode_rng(config, episode_seed);
    let min_sep = 2.0 * config.goal_tolerance;
    for _ in 0..MAX_RESET_DRAWS {
        let state = match config.variant {
            Variant::Reach => {
                let agent = [rng.gen::<f64>(), rng.gen::<f64>()];
                let goal = config
                    .fixed_goal
                    .unwrap_or_else(|| [rng.gen::<f64>(), rng.gen::<f64>()]);
                if distance(agent, goal) < min_sep {
                    continue;
                }
                EnvState {
                    agent_position: agent,
                    object_position: None,
                    goal_position: goal,
                    step_count: 0,
                }
            }
            Variant::Push => {
                // Lattice placement keeps agent/object contact exact. Object and
                // goal stay two cells off the walls so every side is reachable.
                let cells = config.lattice_cells();
                let step = config.step_size;
                let mut cell = |lo: i64, hi: i64| {
                    [
                        rng.gen_range(lo..=hi) as f64 * step,
                        rng.gen_range(lo..=hi) as f64 * step,
                    ]
                };
                let agent = cell(0, cells);
                let object = cell(2, cells - 2);
                let goal = match config.fixed_goal {
                    Some(g) => snap(g, step),
                    None => cell(2, cells - 2),
                };
                if distance(agent, goal) < min_sep
                    || distance(agent, object) < min_sep
                    || distance(object, goal) < min_sep
                {
                    continue;
                }
                EnvState {
                    agent_position: agent,
                    object_position: Some(object),
                    goal_position: goal,
                    step_count: 0,
                }
            }
        };
        let obs = render(&state, config);
        return Ok((state, obs));
    }
    Err(Error::InvalidConfig(format!(
        "could not place agent/object/goal {} apart after {MAX_RESET_DRAWS} draws",
        min_sep
    )))
}

/// Applies one action. No reward of any kind is produced.
pub fn step(state: &EnvState, action: Action, config: &EnvConfig) -> Result<StepOutcome> {
    if state.step_count >= config.horizon {
        return Err(Error::ContractViolation(format!(
            "step called at step_count {} with horizon {}",
            state.step_count, config.horizon
        )));
    }
    if is_success(state, config) {
        return Err(Error::ContractViolation(
            "step called after the episode terminated on success".into(),
        ));
    }
    let dir = action.direction();
    let delta = config.step_size;
    let mut next = *state;
    let moved = clip_unit([
        state.agent_position[0] + delta * dir[0],
        state.agent_position[1] + delta * dir[1],
    ]);
    match (config.variant, state.object_position) {
        (Variant::Push, Some(object)) => {
            let moved = snap(moved, delta);
            if action != Action::NoOp && distance(moved, object) < 0.5 * delta {
                let pushed = snap(
                    [object[0] + delta * dir[0], object[1] + delta * dir[1]],
                    delta,
                );
                if distance(pushed, object) > 0.5 * delta {
                    next.object_position = Some(pushed);
                    next.agent_position = moved;
                }
                // Object against the wall: neither body moves.
            } else {
                next.agent_position = moved;
            }
        }
        _ => next.agent_position = moved,
    }
    next.step_count += 1;
    let done = next.step_count >= config.horizon || is_success(&next, config);
    let observation = render(&next, config);
    Ok(StepOutcome {
        state: next,
        observation,
        done,
    })
}

/// Evaluation-only success oracle. The tolerance boundary is inclusive.
pub fn is_success(state: &EnvState, config: &EnvConfig) -> bool {
    task_distance(state, config) <= config.goal_tolerance
}

/// Distance of the task-relevant body (agent or object) to the goal.
pub fn task_distance(state: &EnvState, config: &EnvConfig) -> f64 {
    match (config.variant, state.object_position) {
        (Variant::Push, Some(object)) => distance(object, state.goal_position),
        _ => distance(state.agent_position, state.goal_position),
    }
}

/// Renders a state to its observation.
pub fn render(state: &EnvState, config: &EnvConfig) -> Observation {
    match config.observation_mode {
        ObservationMode::Vector => {
            let object = state.object_position.unwrap_or([0.0, 0.0]);
            Observation(vec![
                state.agent_position[0] as f32,
                state.agent_position[1] as f32,
                object[0] as f32,
                object[1] as f32,
                state.goal_position[0] as f32,
                state.goal_position[1] as f32,
                1.0,
                0.0,
            ])
        }
        ObservationMode::Pixel => {
            let g = config.grid_size;
            let mut grid = vec![0.0f32; g * g];
            let mut paint = |p: [f64; 2], value: f32| {
                let cx = ((p[0] * g as f64).floor() as usize).min(g - 1);
                let cy = ((p[1] * g as f64).floor() as usize).min(g - 1);
                let cell = &mut grid[cy * g + cx];
                *cell = cell.max(value);
            };
            paint(state.goal_position, 0.3);
            if let Some(object) = state.object_position {
                paint(object, 0.6);
            }
            paint(state.agent_position, 1.0);
            Observation(grid)
        }
    }
}

/// The state in which the task is solved for this goal, used as the goal
/// frame for reward relabelling and goal-conditioned policies.
pub fn goal_state(state: &EnvState) -> EnvState {
    EnvState {
        agent_position: state.goal_position,
        object_position: state.object_position.map(|_| state.goal_position),
        goal_position: state.goal_position,
        step_count: state.step_count,
    }
}

pub fn goal_observation(state: &EnvState, config: &EnvConfig) -> Observation {
    render(&goal_state(state), config)
}

/// Greedy scripted demonstrator; with probability `p_noise` it emits a
/// uniformly random action instead.
pub fn scripted_expert_action<R: Rng + ?Sized>(
    state: &EnvState,
    config: &EnvConfig,
    p_noise: f64,
    noise_rng: &mut R,
) -> Action {
    if p_noise > 0.0 && noise_rng.gen::<f64>() < p_noise {
        return Action::ALL[noise_rng.gen_range(0..Action::COUNT)];
    }
    match (config.variant, state.object_position) {
        (Variant::Push, Some(object)) => {
            push_expert(state.agent_position, object, state.goal_position, config)
        }
        _ => greedy_toward(state.agent_position, state.goal_position, config.step_size),
    }
}

fn greedy_toward(from: [f64; 2], to: [f64; 2], step: f64) -> Action {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    if dx.abs() < 0.5 * step && dy.abs() < 0.5 * step {
        Action::NoOp
    } else if dx.abs() >= dy.abs() {
        Action::along(0, dx > 0.0)
    } else {
        Action::along(1, dy > 0.0)
    }
}

fn push_expert(agent: [f64; 2], object: [f64; 2], goal: [f64; 2], config: &EnvConfig) -> Action {
    let step = config.step_size;
    let cells = config.lattice_cells();
    let to_cell = |p: [f64; 2]| [(p[0] / step).round() as i64, (p[1] / step).round() as i64];
    let a = to_cell(agent);
    let o = to_cell(object);
    let g = to_cell(goal);
    if o == g {
        return Action::NoOp;
    }
    let axis = if o[0] != g[0] { 0 } else { 1 };
    let sign = (g[axis] - o[axis]).signum();
    let mut behind = o;
    behind[axis] -= sign;
    if a == behind {
        return Action::along(axis, sign > 0);
    }
    let gaps = [behind[0] - a[0], behind[1] - a[1]];
    let mut order = [0usize, 1];
    if gaps[1].abs() > gaps[0].abs() {
        order.swap(0, 1);
    }
    for &ax in &order {
        if gaps[ax] == 0 {
            continue;
        }
        let mut next = a;
        next[ax] += gaps[ax].signum();
        if next != o {
            return Action::along(ax, gaps[ax] > 0);
        }
    }
    // Blocked in line with the object: sidestep perpendicular to the gap.
    let blocked_axis = if gaps[0] != 0 { 0 } else { 1 };
    let side = 1 - blocked_axis;
    Action::along(side, a[side] < cells)
}
