//! Dynamic-programming solvers over the known maze dynamics.
//!
//! These serve as optimality oracles for the learned agents. The revisit
//! penalty depends on episode history, so the planners solve the Markovian
//! part of the reward (time, collision, terminal). The goal is absorbing with
//! value zero.

use std::fmt::Write as _;

use thiserror::Error;

use crate::environment::{Action, RewardSpec};
use crate::labyrinth::{Labyrinth, Position};
use crate::num::Scalar;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("discount {0} is outside (0, 1)")]
    InvalidDiscount(f64),
    #[error("tolerance {0} must be positive")]
    InvalidTolerance(f64),
    #[error("no convergence within {0} sweeps")]
    NonConvergence(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable<S> {
    pub gamma: S,
    width: usize,
    values: Vec<S>,
}

impl<S: Scalar> ValueTable<S> {
    pub fn zeros(lab: &Labyrinth, gamma: S) -> Self {
        Self {
            gamma,
            width: lab.width(),
            values: vec![S::zero(); lab.cell_count()],
        }
    }

    pub fn get(&self, p: Position) -> S {
        self.values[p.row * self.width + p.col]
    }

    fn set(&mut self, p: Position, v: S) {
        self.values[p.row * self.width + p.col] = v;
    }

    pub fn to_text(&self, lab: &Labyrinth) -> String {
        let mut out = String::new();
        for row in (0..lab.height()).rev() {
            for col in 0..lab.width() {
                let p = Position::new(row, col);
                if lab.is_obstacle(p) {
                    out.push_str("      # ");
                } else {
                    let _ = write!(out, "{:7.3} ", self.get(p).as_f64());
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    width: usize,
    actions: Vec<Option<Action>>,
}

impl PolicyTable {
    /// The same action on every pathway cell.
    pub fn uniform(lab: &Labyrinth, action: Action) -> Self {
        let actions = (0..lab.cell_count())
            .map(|i| (!lab.is_obstacle(lab.position(i))).then_some(action))
            .collect();
        Self { width: lab.width(), actions }
    }

    pub fn get(&self, p: Position) -> Option<Action> {
        self.actions[p.row * self.width + p.col]
    }

    /// Steps needed to reach the goal from `from` by following the policy,
    /// or `None` if it loops or exceeds `cap`.
    pub fn path_length(&self, lab: &Labyrinth, from: Position, cap: usize) -> Option<usize> {
        let mut pos = from;
        for t in 0..=cap {
            if pos == lab.goal() {
                return Some(t);
            }
            let a = self.get(pos)?;
            pos = successor(lab, pos, a).0;
        }
        None
    }

    pub fn to_text(&self, lab: &Labyrinth) -> String {
        let mut out = String::new();
        for row in (0..lab.height()).rev() {
            for col in 0..lab.width() {
                let p = Position::new(row, col);
                out.push(if p == lab.goal() {
                    'G'
                } else {
                    match self.get(p) {
                        None => '#',
                        Some(Action::Up) => '^',
                        Some(Action::Down) => 'v',
                        Some(Action::Left) => '<',
                        Some(Action::Right) => '>',
                    }
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Result of a solver run.
#[derive(Debug, Clone)]
pub struct Plan<S> {
    pub values: ValueTable<S>,
    pub policy: PolicyTable,
    /// Value iteration: sweeps performed. Policy iteration: improvement rounds.
    pub iterations: usize,
    /// Max-norm change of each value-iteration sweep (empty for policy iteration).
    pub deltas: Vec<S>,
}

fn successor(lab: &Labyrinth, from: Position, a: Action) -> (Position, bool) {
    match a.apply(lab, from) {
        Some(p) if !lab.is_obstacle(p) => (p, false),
        _ => (from, true),
    }
}

fn action_value<S: Scalar>(lab: &Labyrinth, rewards: &RewardSpec, v: &ValueTable<S>, s: Position, a: Action) -> S {
    let (next, blocked) = successor(lab, s, a);
    let reached = next == lab.goal();
    let r = S::of(rewards.markov_reward(blocked, reached));
    if reached {
        r
    } else {
        r + v.gamma * v.get(next)
    }
}

fn check<S: Scalar>(gamma: S, tolerance: S) -> Result<(), PlanError> {
    if !(gamma > S::zero() && gamma < S::one()) {
        return Err(PlanError::InvalidDiscount(gamma.as_f64()));
    }
    if !(tolerance > S::zero()) {
        return Err(PlanError::InvalidTolerance(tolerance.as_f64()));
    }
    Ok(())
}

/// Greedy policy with ties broken by action order (Up, Down, Left, Right).
pub fn greedy_policy<S: Scalar>(lab: &Labyrinth, rewards: &RewardSpec, v: &ValueTable<S>) -> PolicyTable {
    let mut actions = vec![None; lab.cell_count()];
    for s in lab.pathways() {
        if s == lab.goal() {
            continue;
        }
        let q: Vec<S> = Action::ALL.iter().map(|&a| action_value(lab, rewards, v, s, a)).collect();
        actions[lab.index(s)] = Some(Action::ALL[crate::num::argmax(&q)]);
    }
    // The goal is absorbing; give it an action so the table covers every pathway.
    actions[lab.index(lab.goal())] = Some(Action::Up);
    PolicyTable { width: lab.width(), actions }
}

/// Synchronous Bellman optimality sweeps until the max change drops below
/// `tolerance`.
pub fn value_iteration<S: Scalar>(
    lab: &Labyrinth,
    rewards: &RewardSpec,
    gamma: S,
    tolerance: S,
) -> Result<Plan<S>, PlanError> {
    check(gamma, tolerance)?;
    let mut v = ValueTable::zeros(lab, gamma);
    let mut deltas = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let mut next = v.clone();
        let mut delta = S::zero();
        for s in lab.pathways() {
            if s == lab.goal() {
                continue;
            }
            let best = Action::ALL
                .iter()
                .map(|&a| action_value(lab, rewards, &v, s, a))
                .fold(S::neg_infinity(), S::max);
            delta = delta.max((best - v.get(s)).abs());
            next.set(s, best);
        }
        v = next;
        deltas.push(delta);
        if delta < tolerance {
            let policy = greedy_policy(lab, rewards, &v);
            return Ok(Plan { values: v, policy, iterations: sweep, deltas });
        }
    }
    Err(PlanError::NonConvergence(MAX_SWEEPS))
}

/// Iterative policy evaluation (Bellman expectation backups) to `tolerance`.
pub fn evaluate_policy<S: Scalar>(
    lab: &Labyrinth,
    rewards: &RewardSpec,
    policy: &PolicyTable,
    gamma: S,
    tolerance: S,
) -> Result<ValueTable<S>, PlanError> {
    check(gamma, tolerance)?;
    let mut v = ValueTable::zeros(lab, gamma);
    for _ in 0..MAX_SWEEPS {
        let mut delta = S::zero();
        for s in lab.pathways() {
            if s == lab.goal() {
                continue;
            }
            let a = policy.get(s).expect("policy covers pathways");
            let new = action_value(lab, rewards, &v, s, a);
            delta = delta.max((new - v.get(s)).abs());
            v.set(s, new);
        }
        if delta < tolerance {
            return Ok(v);
        }
    }
    Err(PlanError::NonConvergence(MAX_SWEEPS))
}

/// One improvement pass. An action is replaced only when another is better
/// by more than `margin`, so evaluation noise cannot make the loop cycle.
/// Returns whether anything changed.
pub fn improve_policy<S: Scalar>(
    lab: &Labyrinth,
    rewards: &RewardSpec,
    v: &ValueTable<S>,
    policy: &mut PolicyTable,
    margin: S,
) -> bool {
    let mut changed = false;
    for s in lab.pathways() {
        if s == lab.goal() {
            continue;
        }
        let q: Vec<S> = Action::ALL.iter().map(|&a| action_value(lab, rewards, v, s, a)).collect();
        let best = crate::num::argmax(&q);
        let current = policy.get(s).expect("policy covers pathways").index();
        if q[best] > q[current] + margin {
            policy.actions[lab.index(s)] = Some(Action::ALL[best]);
            changed = true;
        }
    }
    changed
}

/// Alternates evaluation and improvement from `initial` (all-Up when `None`)
/// until the policy is stable.
pub fn policy_iteration<S: Scalar>(
    lab: &Labyrinth,
    rewards: &RewardSpec,
    gamma: S,
    tolerance: S,
    initial: Option<PolicyTable>,
) -> Result<Plan<S>, PlanError> {
    check(gamma, tolerance)?;
    let mut policy = initial.unwrap_or_else(|| PolicyTable::uniform(lab, Action::Up));
    // Evaluation error is bounded by tolerance * gamma / (1 - gamma).
    let margin = S::of(10.0) * tolerance / (S::one() - gamma);
    for round in 1..=MAX_SWEEPS {
        let v = evaluate_policy(lab, rewards, &policy, gamma, tolerance)?;
        if !improve_policy(lab, rewards, &v, &mut policy, margin) {
            return Ok(Plan { values: v, policy, iterations: round, deltas: Vec::new() });
        }
    }
    Err(PlanError::NonConvergence(MAX_SWEEPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labyrinth::{dijkstra, generate, GenerateConfig, Grid};
    use crate::rng::seeded;

    fn rewards() -> RewardSpec {
        RewardSpec::default()
    }

    #[test]
    fn goal_neighbour_and_goal_values() {
        let lab = Labyrinth::open(8, 8);
        let plan = value_iteration(&lab, &rewards(), 0.95f64, 1e-9).unwrap();
        assert!((plan.values.get(Position::new(7, 6)) - 0.96).abs() < 1e-12);
        assert!((plan.values.get(Position::new(6, 7)) - 0.96).abs() < 1e-12);
        assert_eq!(plan.values.get(lab.goal()), 0.0);
    }

    #[test]
    fn solvers_match_dijkstra_on_generated_mazes() {
        for seed in 0..10 {
            let lab = generate(&GenerateConfig::default(), &mut seeded(seed)).unwrap().labyrinth;
            let vi = value_iteration(&lab, &rewards(), 0.95f64, 1e-9).unwrap();
            let pi = policy_iteration(&lab, &rewards(), 0.95f64, 1e-9, None).unwrap();
            let d = dijkstra(&lab, lab.goal()).unwrap();
            for s in lab.pathways() {
                let want = d.get(s).map(|x| x as usize);
                assert_eq!(vi.policy.path_length(&lab, s, 140), want, "vi {seed} {s}");
                assert_eq!(pi.policy.path_length(&lab, s, 140), want, "pi {seed} {s}");
            }
        }
    }

    #[test]
    fn corridor_policy_moves_toward_goal_after_one_improvement() {
        let lab = Labyrinth::new(Grid::filled(2, 1, false), Position::new(0, 0), Position::new(0, 1)).unwrap();
        let plan = policy_iteration(&lab, &rewards(), 0.95f64, 1e-9, None).unwrap();
        assert_eq!(plan.policy.get(lab.start()), Some(Action::Right));
        assert_eq!(plan.iterations, 2);
    }

    #[test]
    fn all_up_start_converges_to_optimal_on_open_grid() {
        let lab = Labyrinth::open(8, 8);
        let init = PolicyTable::uniform(&lab, Action::Up);
        let plan = policy_iteration(&lab, &rewards(), 0.95f64, 1e-9, Some(init)).unwrap();
        assert_eq!(plan.policy.path_length(&lab, lab.start(), 140), Some(14));
    }

    #[test]
    fn policy_iteration_values_never_decrease() {
        let lab = generate(&GenerateConfig::default(), &mut seeded(4)).unwrap().labyrinth;
        let mut policy = PolicyTable::uniform(&lab, Action::Left);
        let mut prev = evaluate_policy(&lab, &rewards(), &policy, 0.95f64, 1e-11).unwrap();
        let mut rounds = 0;
        while improve_policy(&lab, &rewards(), &prev, &mut policy, 1e-8) {
            let v = evaluate_policy(&lab, &rewards(), &policy, 0.95f64, 1e-11).unwrap();
            for s in lab.pathways() {
                assert!(v.get(s) >= prev.get(s) - 1e-8, "{s}");
            }
            prev = v;
            rounds += 1;
        }
        assert!(rounds > 1);
    }

    #[test]
    fn value_iteration_sweeps_contract() {
        let lab = generate(&GenerateConfig::default(), &mut seeded(8)).unwrap().labyrinth;
        let plan = value_iteration(&lab, &rewards(), 0.95f64, 1e-9).unwrap();
        for w in plan.deltas[1..].windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{:?}", w);
        }
    }

    #[test]
    fn single_precision_solver_agrees() {
        let lab = generate(&GenerateConfig::default(), &mut seeded(2)).unwrap().labyrinth;
        let plan = value_iteration(&lab, &rewards(), 0.95f32, 1e-6).unwrap();
        assert_eq!(plan.policy.path_length(&lab, lab.start(), 140), Some(14));
    }

    #[test]
    fn invalid_parameters() {
        let lab = Labyrinth::open(3, 3);
        assert_eq!(
            value_iteration(&lab, &rewards(), 1.0f64, 1e-9).unwrap_err(),
            PlanError::InvalidDiscount(1.0)
        );
        assert_eq!(
            value_iteration(&lab, &rewards(), 0.9f64, 0.0).unwrap_err(),
            PlanError::InvalidTolerance(0.0)
        );
    }

    #[test]
    fn text_dumps() {
        let lab = Labyrinth::open(3, 3);
        let plan = value_iteration(&lab, &rewards(), 0.95f64, 1e-9).unwrap();
        let text = plan.policy.to_text(&lab);
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(">>G"), "{text}");
        assert_eq!(plan.values.to_text(&lab).lines().count(), 3);
    }
}
