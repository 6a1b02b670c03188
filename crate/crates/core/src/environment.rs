//! The labyrinth game as a Markov decision process.
//!
//! The agent's position is the only dynamic state. Rewards are additive over
//! the components that apply to a move: time, collision, revisit and
//! terminal. The steganographic reward is not part of the environment; the
//! training loop appends it to the final transition after the observer has
//! seen the episode.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labyrinth::{Labyrinth, Position};
use crate::num::Scalar;

/// Step cap used by the experiments: ten times the optimal path length.
pub const DEFAULT_STEP_CAP: usize = 140;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("agent position {0} is an obstacle or out of bounds")]
    InvalidPosition(Position),
    #[error("episode is inconsistent: {0}")]
    InvalidEpisode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(d_row, d_col)`; Up increases the row index.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (1, 0),
            Action::Down => (-1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    /// Target cell of the move, or `None` if it leaves the grid.
    pub fn apply(self, lab: &Labyrinth, from: Position) -> Option<Position> {
        let (dr, dc) = self.delta();
        let r = from.row as isize + dr;
        let c = from.col as isize + dc;
        if r < 0 || c < 0 || r as usize >= lab.height() || c as usize >= lab.width() {
            None
        } else {
            Some(Position::new(r as usize, c as usize))
        }
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Action::from_code(code).ok_or_else(|| format!("invalid action code {code}"))
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.code()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub time_penalty: f64,
    pub revisit_penalty: f64,
    pub collision_penalty: f64,
    pub terminal_reward: f64,
    pub stego_reward: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            time_penalty: -0.04,
            revisit_penalty: -0.25,
            collision_penalty: -0.75,
            terminal_reward: 1.00,
            stego_reward: 1.00,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.terminal_reward <= 0.0 {
            return Err(format!("terminal reward {} must be positive", self.terminal_reward));
        }
        for (name, v) in [
            ("time_penalty", self.time_penalty),
            ("revisit_penalty", self.revisit_penalty),
            ("collision_penalty", self.collision_penalty),
        ] {
            if v > 0.0 {
                return Err(format!("{name} {v} must be <= 0"));
            }
        }
        Ok(())
    }

    /// Reward for a move that ignores visit history. Planners use this
    /// Markovian part of the reward.
    pub fn markov_reward(&self, blocked: bool, reached_goal: bool) -> f64 {
        let mut r = self.time_penalty;
        if blocked {
            r += self.collision_penalty;
        }
        if reached_goal {
            r += self.terminal_reward;
        }
        r
    }
}

/// Per-cell visit counts within one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visits {
    width: usize,
    counts: Vec<u32>,
}

impl Visits {
    pub fn new(lab: &Labyrinth) -> Self {
        Self {
            width: lab.width(),
            counts: vec![0; lab.cell_count()],
        }
    }

    pub fn record(&mut self, p: Position) {
        self.counts[p.row * self.width + p.col] += 1;
    }

    pub fn count(&self, p: Position) -> u32 {
        self.counts[p.row * self.width + p.col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: Position,
    pub reward: f64,
    pub terminal: bool,
    pub blocked: bool,
}

/// Applies one action. Blocked moves leave the agent in place.
pub fn step(
    lab: &Labyrinth,
    rewards: &RewardSpec,
    current: Position,
    action: Action,
    visited: &Visits,
) -> Result<StepOutcome, EnvError> {
    if !lab.is_pathway(current) {
        return Err(EnvError::InvalidPosition(current));
    }
    let (next, blocked) = match action.apply(lab, current) {
        Some(p) if !lab.is_obstacle(p) => (p, false),
        _ => (current, true),
    };
    let terminal = next == lab.goal();
    let mut reward = rewards.markov_reward(blocked, terminal);
    if visited.count(next) > 0 {
        reward += rewards.revisit_penalty;
    }
    Ok(StepOutcome { next, reward, terminal, blocked })
}

/// One `(s, a, r, s')` experience.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Position,
    pub action: Action,
    pub reward: f64,
    pub next_state: Position,
    pub terminal: bool,
}

/// A recorded trajectory from the start cell to the goal or the step cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub labyrinth_id: String,
    pub positions: Vec<Position>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub completed: bool,
    pub steps: usize,
}

impl Episode {
    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        let last = self.steps.saturating_sub(1);
        (0..self.steps).map(move |t| Transition {
            state: self.positions[t],
            action: self.actions[t],
            reward: self.rewards[t],
            next_state: self.positions[t + 1],
            terminal: self.completed && t == last,
        })
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn last_position(&self) -> Position {
        *self.positions.last().expect("episodes hold at least the start cell")
    }

    /// Checks the structural invariants against the labyrinth the episode
    /// claims to come from.
    pub fn validate(&self, lab: &Labyrinth, step_cap: usize) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidEpisode(m));
        if self.labyrinth_id != lab.id() {
            return bad(format!("labyrinth id {} != {}", self.labyrinth_id, lab.id()));
        }
        if self.positions.len() != self.steps + 1
            || self.actions.len() != self.steps
            || self.rewards.len() != self.steps
        {
            return bad("sequence lengths disagree with step count".into());
        }
        if self.steps > step_cap {
            return bad(format!("{} steps exceed the cap {step_cap}", self.steps));
        }
        if self.positions[0] != lab.start() {
            return bad("does not begin at the start cell".into());
        }
        if self.completed != (self.last_position() == lab.goal()) {
            return bad("completion flag disagrees with the final cell".into());
        }
        for (t, w) in self.positions.windows(2).enumerate() {
            if !lab.is_pathway(w[0]) || !lab.is_pathway(w[1]) {
                return bad(format!("step {t} touches an obstacle"));
            }
            let expected = match self.actions[t].apply(lab, w[0]) {
                Some(p) if lab.is_pathway(p) => p,
                _ => w[0],
            };
            if w[1] != expected {
                return bad(format!("step {t} does not follow action {}", self.actions[t]));
            }
            if t + 1 < self.steps && w[1] == lab.goal() {
                return bad("continues past the goal".into());
            }
        }
        Ok(())
    }
}

/// Runs `policy` from the start cell until the goal or `step_cap` steps.
pub fn rollout<R, P>(
    lab: &Labyrinth,
    rewards: &RewardSpec,
    step_cap: usize,
    rng: &mut R,
    mut policy: P,
) -> Episode
where
    R: Rng + ?Sized,
    P: FnMut(Position, &mut R) -> Action,
{
    let mut visits = Visits::new(lab);
    let mut pos = lab.start();
    visits.record(pos);
    let mut positions = vec![pos];
    let mut actions = Vec::new();
    let mut step_rewards = Vec::new();
    let mut completed = pos == lab.goal();
    while !completed && actions.len() < step_cap {
        let action = policy(pos, rng);
        let out = step(lab, rewards, pos, action, &visits).expect("rollout stays on pathways");
        visits.record(out.next);
        pos = out.next;
        positions.push(pos);
        actions.push(action);
        step_rewards.push(out.reward);
        completed = out.terminal;
    }
    Episode {
        labyrinth_id: lab.id(),
        steps: actions.len(),
        positions,
        actions,
        rewards: step_rewards,
        completed,
    }
}

/// Three binary channels (agent, goal, obstacles), each row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEncoding {
    pub width: usize,
    pub height: usize,
    pub agent: Vec<u8>,
    pub goal: Vec<u8>,
    pub obstacles: Vec<u8>,
}

impl StateEncoding {
    pub fn len(&self) -> usize {
        3 * self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width * self.height == 0
    }

    /// Channels concatenated in the order agent, goal, obstacles.
    pub fn flatten<S: Scalar>(&self) -> Vec<S> {
        self.agent
            .iter()
            .chain(&self.goal)
            .chain(&self.obstacles)
            .map(|&b| if b == 1 { S::one() } else { S::zero() })
            .collect()
    }
}

pub fn encode_state(lab: &Labyrinth, agent_pos: Position) -> StateEncoding {
    let n = lab.cell_count();
    let mut agent = vec![0u8; n];
    let mut goal = vec![0u8; n];
    agent[lab.index(agent_pos)] = 1;
    goal[lab.index(lab.goal())] = 1;
    let obstacles = lab.grid().cells().iter().map(|&c| c as u8).collect();
    StateEncoding {
        width: lab.width(),
        height: lab.height(),
        agent,
        goal,
        obstacles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labyrinth::{generate, GenerateConfig, Grid};
    use crate::rng::seeded;

    fn walled_lab() -> Labyrinth {
        // Obstacle directly above the start.
        let mut grid = Grid::filled(8, 8, false);
        grid.set(Position::new(1, 0), true);
        Labyrinth::new(grid, Position::new(0, 0), Position::new(7, 7)).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn free_move_costs_time_only() {
        let lab = walled_lab();
        let mut v = Visits::new(&lab);
        v.record(lab.start());
        let out = step(&lab, &RewardSpec::default(), lab.start(), Action::Right, &v).unwrap();
        assert_eq!(out.next, Position::new(0, 1));
        assert!(close(out.reward, -0.04));
        assert!(!out.terminal);
    }

    #[test]
    fn collision_adds_collision_and_revisit() {
        let lab = walled_lab();
        let mut v = Visits::new(&lab);
        v.record(lab.start());
        for a in [Action::Up, Action::Left, Action::Down] {
            let out = step(&lab, &RewardSpec::default(), lab.start(), a, &v).unwrap();
            assert_eq!(out.next, lab.start());
            assert!(out.blocked);
            assert!(close(out.reward, -1.04), "{a}: {}", out.reward);
        }
    }

    #[test]
    fn entering_goal_is_terminal() {
        let lab = walled_lab();
        let from = Position::new(7, 6);
        let mut v = Visits::new(&lab);
        v.record(from);
        let out = step(&lab, &RewardSpec::default(), from, Action::Right, &v).unwrap();
        assert!(out.terminal);
        assert!(close(out.reward, 0.96));
    }

    #[test]
    fn stepping_from_an_obstacle_is_an_error() {
        let lab = walled_lab();
        let v = Visits::new(&lab);
        assert_eq!(
            step(&lab, &RewardSpec::default(), Position::new(1, 0), Action::Up, &v),
            Err(EnvError::InvalidPosition(Position::new(1, 0)))
        );
    }

    #[test]
    fn optimal_run_on_open_grid() {
        let lab = Labyrinth::open(8, 8);
        let ep = rollout(&lab, &RewardSpec::default(), DEFAULT_STEP_CAP, &mut seeded(0), |p, _| {
            if p.col < 7 {
                Action::Right
            } else {
                Action::Up
            }
        });
        assert!(ep.completed);
        assert_eq!(ep.steps, 14);
        assert!((ep.total_reward() - 0.44).abs() < 1e-12);
        ep.validate(&lab, DEFAULT_STEP_CAP).unwrap();
        let ts: Vec<_> = ep.transitions().collect();
        assert!(ts[13].terminal && !ts[12].terminal);
    }

    #[test]
    fn step_cap_is_enforced() {
        let lab = walled_lab();
        let ep = rollout(&lab, &RewardSpec::default(), DEFAULT_STEP_CAP, &mut seeded(0), |_, _| Action::Up);
        assert_eq!(ep.steps, 140);
        assert!(!ep.completed);
        assert!(ep.positions.iter().all(|&p| p == lab.start()));
        ep.validate(&lab, DEFAULT_STEP_CAP).unwrap();
    }

    #[test]
    fn uniform_random_walk_matches_independent_simulator() {
        // Second simulator: plain integer coordinates, same draw protocol
        // (one uniform action index per step), no shared code.
        fn reference(seed: u64) -> (bool, usize) {
            let mut rng = seeded(seed);
            let (mut r, mut c) = (0i32, 0i32);
            for t in 1..=140 {
                let a: usize = rng.random_range(0..4);
                let (nr, nc) = [(r + 1, c), (r - 1, c), (r, c - 1), (r, c + 1)][a];
                if (0..8).contains(&nr) && (0..8).contains(&nc) {
                    r = nr;
                    c = nc;
                }
                if (r, c) == (7, 7) {
                    return (true, t);
                }
            }
            (false, 140)
        }
        let lab = Labyrinth::open(8, 8);
        let (mut done_a, mut steps_a, mut done_b, mut steps_b) = (0, 0, 0, 0);
        for seed in 0..1000 {
            let ep = rollout(&lab, &RewardSpec::default(), 140, &mut seeded(seed), |_, rng| {
                Action::ALL[rng.random_range(0..4)]
            });
            let (done, steps) = reference(seed);
            done_a += ep.completed as usize;
            steps_a += ep.steps;
            done_b += done as usize;
            steps_b += steps;
        }
        assert_eq!((done_a, steps_a), (done_b, steps_b));
        assert!(done_a > 0 && done_a < 1000);
    }

    #[test]
    fn episodes_never_touch_obstacles() {
        let lab = generate(&GenerateConfig::default(), &mut seeded(5)).unwrap().labyrinth;
        for seed in 0..50 {
            let ep = rollout(&lab, &RewardSpec::default(), 140, &mut seeded(seed), |_, rng| {
                Action::ALL[rng.random_range(0..4)]
            });
            assert!(ep.positions.iter().all(|&p| lab.is_pathway(p)));
            ep.validate(&lab, 140).unwrap();
        }
    }

    #[test]
    fn state_encoding_channels() {
        let lab = generate(&GenerateConfig::default(), &mut seeded(1)).unwrap().labyrinth;
        let enc = encode_state(&lab, lab.start());
        assert_eq!(enc.agent[0], 1);
        assert_eq!(enc.agent.iter().map(|&b| b as usize).sum::<usize>(), 1);
        assert_eq!(enc.goal.iter().map(|&b| b as usize).sum::<usize>(), 1);
        assert_eq!(enc.obstacles.iter().map(|&b| b as usize).sum::<usize>(), lab.obstacle_count());
        let flat: Vec<f64> = enc.flatten();
        assert_eq!(flat.len(), 192);
        assert_eq!(enc.len(), 192);
    }

    #[test]
    fn episode_serialization_uses_pairs_and_codes() {
        let lab = Labyrinth::open(2, 1);
        let ep = rollout(&lab, &RewardSpec::default(), 10, &mut seeded(0), |_, _| Action::Right);
        let json = serde_json::to_string(&ep).unwrap();
        assert!(json.contains("\"positions\":[[0,0],[0,1]]"), "{json}");
        assert!(json.contains("\"actions\":[3]"), "{json}");
        let back: Episode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ep);
    }

    #[test]
    fn tampered_episode_fails_validation() {
        let lab = Labyrinth::open(8, 8);
        let mut ep = rollout(&lab, &RewardSpec::default(), 140, &mut seeded(0), |p, _| {
            if p.row < 7 {
                Action::Up
            } else {
                Action::Right
            }
        });
        ep.positions[3] = Position::new(5, 5);
        assert!(ep.validate(&lab, 140).is_err());
    }
}
