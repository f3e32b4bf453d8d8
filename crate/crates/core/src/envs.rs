//! Seedable pixel-observation toy MDPs and an exact tabular value-iteration
//! oracle over their latent state spaces.
//!
//! * `PixelGrid`: the agent walks to a goal cell. Moving off the grid or into
//!   a wall leaves the agent in place. Every step costs `step_penalty`; reaching
//!   the goal pays `goal_reward` and ends the episode.
//! * `Catch`: a ball falls one row per step from a uniformly random column of
//!   the top row; the paddle on the bottom row moves left, stays or moves
//!   right. The episode ends when the ball reaches the bottom row.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{argmax, Rng};
use crate::obs::Obs;

pub const AGENT_INTENSITY: f64 = 1.0;
pub const GOAL_INTENSITY: f64 = 0.5;
pub const WALL_INTENSITY: f64 = 0.75;
pub const BALL_INTENSITY: f64 = 1.0;
pub const PADDLE_INTENSITY: f64 = 0.8;

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_EPISODE_CAP: u32 = 200;

/// Upper bound on `states × actions` accepted by the tabular oracle.
pub const ORACLE_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeDone,
    #[error("action {action} not in action set of size {actions}")]
    InvalidAction { action: usize, actions: usize },
    #[error("state does not belong to this environment")]
    WrongKind,
    #[error("latent state space of {entries} entries exceeds the oracle cap of {cap}")]
    StateSpaceTooLarge { entries: usize, cap: usize },
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PixelGrid,
    Catch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_episode_cap")]
    pub episode_cap: u32,
    /// PixelGrid: reward for reaching the goal.
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    /// PixelGrid: reward for every other step.
    #[serde(default = "default_step_penalty")]
    pub step_penalty: f64,
    /// Catch: terminal reward when the paddle is under the ball.
    #[serde(default = "default_catch_reward")]
    pub catch_reward: f64,
    /// Catch: terminal reward otherwise.
    #[serde(default = "default_miss_reward")]
    pub miss_reward: f64,
    /// PixelGrid wall cells as `[row, col]`.
    #[serde(default)]
    pub walls: Vec<[usize; 2]>,
}

fn default_episode_cap() -> u32 {
    DEFAULT_EPISODE_CAP
}
fn default_goal_reward() -> f64 {
    1.0
}
fn default_step_penalty() -> f64 {
    -0.01
}
fn default_catch_reward() -> f64 {
    1.0
}
fn default_miss_reward() -> f64 {
    -1.0
}

impl EnvSpec {
    pub fn catch(height: usize, width: usize) -> Self {
        Self {
            kind: EnvKind::Catch,
            height,
            width,
            episode_cap: DEFAULT_EPISODE_CAP,
            goal_reward: default_goal_reward(),
            step_penalty: default_step_penalty(),
            catch_reward: default_catch_reward(),
            miss_reward: default_miss_reward(),
            walls: Vec::new(),
        }
    }

    pub fn pixel_grid(height: usize, width: usize) -> Self {
        Self {
            kind: EnvKind::PixelGrid,
            ..Self::catch(height, width)
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidSpec(m.to_string()));
        if self.episode_cap < 1 {
            return bad("episode cap must be at least 1");
        }
        if self.height < 2 || self.width < 2 {
            return bad("grid must be at least 2x2");
        }
        match self.kind {
            EnvKind::Catch => {
                if !self.walls.is_empty() {
                    return bad("catch has no walls");
                }
            }
            EnvKind::PixelGrid => {
                if self
                    .walls
                    .iter()
                    .any(|[r, c]| *r >= self.height || *c >= self.width)
                {
                    return bad("wall outside grid");
                }
                if self.free_cells().len() < 2 {
                    return bad("need at least two free cells");
                }
            }
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        match self.kind {
            EnvKind::PixelGrid => 4,
            EnvKind::Catch => 3,
        }
    }

    pub fn action_names(&self) -> &'static [&'static str] {
        match self.kind {
            EnvKind::PixelGrid => &["up", "down", "left", "right"],
            EnvKind::Catch => &["left", "stay", "right"],
        }
    }

    fn is_wall(&self, r: usize, c: usize) -> bool {
        self.walls.contains(&[r, c])
    }

    fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| !self.is_wall(r, c))
            .collect()
    }

    fn paddle_start(&self) -> usize {
        self.width / 2
    }

    /// Draws an initial state from `rng` and renders it.
    pub fn reset(&self, rng: &mut Rng) -> (LatentState, Obs) {
        let state = match self.kind {
            EnvKind::Catch => LatentState {
                pos: Latent::Catch {
                    ball_row: 0,
                    ball_col: rng.below(self.width),
                    paddle: self.paddle_start(),
                },
                tick: 0,
                done: false,
            },
            EnvKind::PixelGrid => {
                let free = self.free_cells();
                let agent = free[rng.below(free.len())];
                let goal = loop {
                    let g = free[rng.below(free.len())];
                    if g != agent {
                        break g;
                    }
                };
                LatentState {
                    pos: Latent::Grid { agent, goal },
                    tick: 0,
                    done: false,
                }
            }
        };
        let obs = self.render(&state.pos);
        (state, obs)
    }

    /// Deterministic latent transition: `(next, reward, terminal)`.
    pub fn transition(&self, pos: &Latent, action: usize) -> Result<(Latent, f64, bool), EnvError> {
        if action >= self.num_actions() {
            return Err(EnvError::InvalidAction {
                action,
                actions: self.num_actions(),
            });
        }
        match (*pos, self.kind) {
            (
                Latent::Catch {
                    ball_row,
                    ball_col,
                    paddle,
                },
                EnvKind::Catch,
            ) => {
                let paddle = match action {
                    0 => paddle.saturating_sub(1),
                    1 => paddle,
                    _ => (paddle + 1).min(self.width - 1),
                };
                let ball_row = ball_row + 1;
                let terminal = ball_row >= self.height - 1;
                let reward = match (terminal, paddle == ball_col) {
                    (false, _) => 0.0,
                    (true, true) => self.catch_reward,
                    (true, false) => self.miss_reward,
                };
                Ok((
                    Latent::Catch {
                        ball_row,
                        ball_col,
                        paddle,
                    },
                    reward,
                    terminal,
                ))
            }
            (Latent::Grid { agent, goal }, EnvKind::PixelGrid) => {
                let (r, c) = agent;
                let target = match action {
                    0 => r.checked_sub(1).map(|r| (r, c)),
                    1 => (r + 1 < self.height).then_some((r + 1, c)),
                    2 => c.checked_sub(1).map(|c| (r, c)),
                    _ => (c + 1 < self.width).then_some((r, c + 1)),
                };
                let agent = match target {
                    Some((tr, tc)) if !self.is_wall(tr, tc) => (tr, tc),
                    _ => agent,
                };
                if agent == goal {
                    Ok((Latent::Grid { agent, goal }, self.goal_reward, true))
                } else {
                    Ok((Latent::Grid { agent, goal }, self.step_penalty, false))
                }
            }
            _ => Err(EnvError::WrongKind),
        }
    }

    pub fn step(&self, state: &LatentState, action: usize) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeDone);
        }
        let (pos, reward, terminal) = self.transition(&state.pos, action)?;
        let tick = state.tick + 1;
        let done = terminal || tick >= self.episode_cap;
        let obs = self.render(&pos);
        Ok(StepOutcome {
            state: LatentState { pos, tick, done },
            obs,
            reward,
            done,
        })
    }

    /// Pure rendering of the positional part of a state.
    pub fn render(&self, pos: &Latent) -> Obs {
        let mut pixels = vec![0.0; self.height * self.width];
        let w = self.width;
        match *pos {
            Latent::Catch {
                ball_row,
                ball_col,
                paddle,
            } => {
                pixels[(self.height - 1) * w + paddle] = PADDLE_INTENSITY;
                let i = ball_row * w + ball_col;
                pixels[i] = pixels[i].max(BALL_INTENSITY);
            }
            Latent::Grid { agent, goal } => {
                for [r, c] in &self.walls {
                    pixels[r * w + c] = WALL_INTENSITY;
                }
                pixels[goal.0 * w + goal.1] = GOAL_INTENSITY;
                pixels[agent.0 * w + agent.1] = AGENT_INTENSITY;
            }
        }
        Obs::new(self.height, self.width, pixels).expect("intensities lie in [0, 1]")
    }

    /// Every non-terminal latent position, in a fixed order.
    pub fn latent_states(&self) -> Vec<Latent> {
        match self.kind {
            EnvKind::Catch => {
                let mut out = Vec::new();
                for ball_row in 0..self.height - 1 {
                    for ball_col in 0..self.width {
                        for paddle in 0..self.width {
                            out.push(Latent::Catch {
                                ball_row,
                                ball_col,
                                paddle,
                            });
                        }
                    }
                }
                out
            }
            EnvKind::PixelGrid => {
                let free = self.free_cells();
                let mut out = Vec::new();
                for &agent in &free {
                    for &goal in &free {
                        if agent != goal {
                            out.push(Latent::Grid { agent, goal });
                        }
                    }
                }
                out
            }
        }
    }

    /// Exact optimal Q over the latent positions (episode cap ignored).
    pub fn value_iteration_oracle(&self, gamma: f64) -> Result<TabularQ, EnvError> {
        self.validate()?;
        let states = self.latent_states();
        let actions = self.num_actions();
        let entries = states.len() * actions;
        if entries > ORACLE_CAP {
            return Err(EnvError::StateSpaceTooLarge {
                entries,
                cap: ORACLE_CAP,
            });
        }
        let index: HashMap<Latent, usize> =
            states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let table = value_iteration(states.len(), actions, gamma, 1e-10, |s, a| {
            let (next, reward, terminal) = self.transition(&states[s], a).expect("valid action");
            (if terminal { None } else { Some(index[&next]) }, reward)
        })?;
        Ok(TabularQ { index, table })
    }
}

/// Positional part of a latent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Latent {
    Catch {
        ball_row: usize,
        ball_col: usize,
        paddle: usize,
    },
    Grid {
        agent: (usize, usize),
        goal: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatentState {
    pub pos: Latent,
    pub tick: u32,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: LatentState,
    pub obs: Obs,
    pub reward: f64,
    pub done: bool,
}

/// Dense tabular Q-function.
#[derive(Debug, Clone)]
pub struct QTable {
    pub actions: usize,
    pub q: Vec<f64>,
    /// Sup-norm Bellman residual at termination.
    pub residual: f64,
    pub sweeps: usize,
}

impl QTable {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.actions..(s + 1) * self.actions]
    }

    pub fn value(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Value iteration on a deterministic tabular MDP. `step(s, a)` returns the
/// successor (`None` when terminal) and the reward.
pub fn value_iteration<F>(
    states: usize,
    actions: usize,
    gamma: f64,
    tol: f64,
    step: F,
) -> Result<QTable, EnvError>
where
    F: Fn(usize, usize) -> (Option<usize>, f64),
{
    let entries = states * actions;
    if entries > ORACLE_CAP {
        return Err(EnvError::StateSpaceTooLarge {
            entries,
            cap: ORACLE_CAP,
        });
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(EnvError::InvalidSpec(format!(
            "discount {gamma} outside [0, 1)"
        )));
    }
    let transitions: Vec<(Option<usize>, f64)> = (0..states)
        .flat_map(|s| (0..actions).map(move |a| (s, a)))
        .map(|(s, a)| step(s, a))
        .collect();
    let mut q = vec![0.0; entries];
    let mut values = vec![0.0; states];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut residual: f64 = 0.0;
        for (i, (next, reward)) in transitions.iter().enumerate() {
            let target = reward + next.map_or(0.0, |n| gamma * values[n]);
            residual = residual.max((target - q[i]).abs());
            q[i] = target;
        }
        for (s, v) in values.iter_mut().enumerate() {
            *v = q[s * actions..(s + 1) * actions]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
        }
        // Jacobi-style sweep: the update size bounds the Bellman residual of
        // the previous iterate, and the new iterate's residual is ≤ γ times it.
        if residual <= tol || sweeps >= 1_000_000 {
            return Ok(QTable {
                actions,
                q,
                residual: gamma * residual,
                sweeps,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct TabularQ {
    index: HashMap<Latent, usize>,
    pub table: QTable,
}

impl TabularQ {
    pub fn q(&self, pos: &Latent) -> Option<&[f64]> {
        self.index.get(pos).map(|&i| self.table.row(i))
    }

    pub fn greedy(&self, pos: &Latent) -> Option<usize> {
        self.q(pos).map(argmax)
    }

    pub fn value(&self, pos: &Latent) -> Option<f64> {
        self.index.get(pos).map(|&i| self.table.value(i))
    }
}

/// Undiscounted return of one episode driven by `policy`.
pub fn run_episode<P>(spec: &EnvSpec, rng: &mut Rng, mut policy: P) -> f64
where
    P: FnMut(&LatentState, &Obs) -> usize,
{
    let (mut state, mut obs) = spec.reset(rng);
    let mut total = 0.0;
    while !state.done {
        let a = policy(&state, &obs);
        let out = spec.step(&state, a).expect("policy returns valid actions");
        total += out.reward;
        state = out.state;
        obs = out.obs;
    }
    total
}
