//! Action-value backends: an exact table, and a one-hidden-layer dense
//! approximator trained from a replay buffer against a periodically
//! synchronized target copy.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{encode_state, Action, Transition};
use crate::labyrinth::{Labyrinth, Position};
use crate::num::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("non-finite loss ({0}); reduce the learning rate")]
    NonFiniteLoss(f64),
    #[error("empty training batch")]
    EmptyBatch,
}

/// Tabular action values, one row of four per grid cell, default zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct QTable<S> {
    width: usize,
    height: usize,
    values: Vec<[S; 4]>,
}

impl<S: Scalar> QTable<S> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![[S::zero(); 4]; width * height],
        }
    }

    pub fn for_labyrinth(lab: &Labyrinth) -> Self {
        Self::new(lab.width(), lab.height())
    }

    pub fn q(&self, s: Position, a: Action) -> S {
        self.values[s.row * self.width + s.col][a.index()]
    }

    pub fn q_values(&self, s: Position) -> [S; 4] {
        self.values[s.row * self.width + s.col]
    }

    pub fn set(&mut self, s: Position, a: Action, v: S) {
        self.values[s.row * self.width + s.col][a.index()] = v;
    }

    pub fn max_q(&self, s: Position) -> S {
        self.q_values(s).into_iter().fold(S::neg_infinity(), S::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    fn td_step(&mut self, t: &Transition, bootstrap: S, alpha: S, gamma: S) {
        let target = S::of(t.reward) + if t.terminal { S::zero() } else { gamma * bootstrap };
        let q = self.q(t.state, t.action);
        self.set(t.state, t.action, q + alpha * (target - q));
    }

    /// Off-policy update: bootstraps from the best next action.
    pub fn td_update_qlearning(&mut self, t: &Transition, alpha: S, gamma: S) {
        let bootstrap = self.max_q(t.next_state);
        self.td_step(t, bootstrap, alpha, gamma);
    }

    /// On-policy update: bootstraps from the action actually taken next.
    pub fn td_update_sarsa(&mut self, t: &Transition, next_action: Action, alpha: S, gamma: S) {
        let bootstrap = self.q(t.next_state, next_action);
        self.td_step(t, bootstrap, alpha, gamma);
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Bounded FIFO of experiences; the oldest entry is evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `size` draws with replacement; empty when the buffer is empty.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Parameters of a `inputs -> hidden (tanh) -> outputs` network stored as a
/// single flat vector: `w1 (hidden x inputs) | b1 | w2 (outputs x hidden) | b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DenseParams<S> {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub theta: Vec<S>,
}

struct Forward<S> {
    hidden: Vec<S>,
    out: Vec<S>,
}

impl<S: Scalar> DenseParams<S> {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        let n = hidden * inputs + hidden + outputs * hidden + outputs;
        Self { inputs, hidden, outputs, theta: vec![S::zero(); n] }
    }

    /// Uniform in `±1/sqrt(fan_in)` per layer.
    pub fn random<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(inputs, hidden, outputs);
        let b1 = 1.0 / (inputs as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let split = hidden * inputs + hidden;
        for (i, w) in p.theta.iter_mut().enumerate() {
            let bound = if i < split { b1 } else { b2 };
            *w = S::of(rng.random_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (b1, w2, b2)
    }

    fn forward(&self, x: &[S]) -> Forward<S> {
        let (b1, w2, b2) = self.offsets();
        let mut hidden = Vec::with_capacity(self.hidden);
        for j in 0..self.hidden {
            let row = &self.theta[j * self.inputs..(j + 1) * self.inputs];
            let mut z = self.theta[b1 + j];
            for (w, &xi) in row.iter().zip(x) {
                if xi != S::zero() {
                    z += *w * xi;
                }
            }
            hidden.push(z.tanh());
        }
        let mut out = Vec::with_capacity(self.outputs);
        for k in 0..self.outputs {
            let row = &self.theta[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
            let z = row.iter().zip(&hidden).map(|(&w, &h)| w * h).sum::<S>() + self.theta[b2 + k];
            out.push(z);
        }
        Forward { hidden, out }
    }

    pub fn evaluate(&self, x: &[S]) -> Vec<S> {
        self.forward(x).out
    }

    /// Accumulates `scale * d out[k] / d theta` into `grad`.
    fn backward(&self, x: &[S], fwd: &Forward<S>, k: usize, scale: S, grad: &mut [S]) {
        let (b1, w2, b2) = self.offsets();
        grad[b2 + k] += scale;
        for j in 0..self.hidden {
            let w = self.theta[w2 + k * self.hidden + j];
            let h = fwd.hidden[j];
            grad[w2 + k * self.hidden + j] += scale * h;
            let dz = scale * w * (S::one() - h * h);
            grad[b1 + j] += dz;
            let row = &mut grad[j * self.inputs..(j + 1) * self.inputs];
            for (g, &xi) in row.iter_mut().zip(x) {
                if xi != S::zero() {
                    *g += dz * xi;
                }
            }
        }
    }
}

/// Dense Q approximator over the flattened three-channel state encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DenseQNet<S> {
    pub online: DenseParams<S>,
    pub target: DenseParams<S>,
    pub sync_interval: usize,
    pub updates: usize,
}

impl<S: Scalar> DenseQNet<S> {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_SYNC_INTERVAL: usize = 100;

    pub fn new<R: Rng + ?Sized>(lab: &Labyrinth, hidden: usize, sync_interval: usize, rng: &mut R) -> Self {
        let online = DenseParams::random(3 * lab.cell_count(), hidden, Action::COUNT, rng);
        Self {
            target: online.clone(),
            online,
            sync_interval: sync_interval.max(1),
            updates: 0,
        }
    }

    pub fn from_params(online: DenseParams<S>, sync_interval: usize) -> Self {
        Self {
            target: online.clone(),
            online,
            sync_interval: sync_interval.max(1),
            updates: 0,
        }
    }

    pub fn q_values(&self, lab: &Labyrinth, s: Position) -> [S; 4] {
        to_array(&self.online.evaluate(&encode_state(lab, s).flatten()))
    }

    pub fn target_q_values(&self, lab: &Labyrinth, s: Position) -> [S; 4] {
        to_array(&self.target.evaluate(&encode_state(lab, s).flatten()))
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Mean squared TD error of the batch and its gradient with respect to
    /// the online parameters. Targets come from the target copy and are held
    /// constant.
    pub fn loss_and_gradient(&self, lab: &Labyrinth, batch: &[Transition], gamma: S) -> (S, Vec<S>) {
        let mut grad = vec![S::zero(); self.online.len()];
        let n = S::of(batch.len() as f64);
        let mut loss = S::zero();
        for t in batch {
            let y = self.td_target(lab, t, gamma);
            let x: Vec<S> = encode_state(lab, t.state).flatten();
            let fwd = self.online.forward(&x);
            let err = fwd.out[t.action.index()] - y;
            loss += err * err;
            self.online.backward(&x, &fwd, t.action.index(), S::of(2.0) * err / n, &mut grad);
        }
        (loss / n, grad)
    }

    pub fn td_target(&self, lab: &Labyrinth, t: &Transition, gamma: S) -> S {
        let r = S::of(t.reward);
        if t.terminal {
            r
        } else {
            let next = self.target_q_values(lab, t.next_state);
            r + gamma * next.into_iter().fold(S::neg_infinity(), S::max)
        }
    }

    /// One gradient-descent step on the batch loss. Synchronizes the target
    /// copy every `sync_interval` updates. Returns the pre-update loss.
    pub fn train_step(&mut self, lab: &Labyrinth, batch: &[Transition], alpha: S, gamma: S) -> Result<S, LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let (loss, grad) = self.loss_and_gradient(lab, batch, gamma);
        if !loss.is_finite() {
            return Err(LearnError::NonFiniteLoss(loss.as_f64()));
        }
        for (w, g) in self.online.theta.iter_mut().zip(&grad) {
            *w -= alpha * *g;
        }
        self.updates += 1;
        if self.updates % self.sync_interval == 0 {
            self.sync_target();
        }
        Ok(loss)
    }
}

fn to_array<S: Scalar>(v: &[S]) -> [S; 4] {
    [v[0], v[1], v[2], v[3]]
}

/// Either backend behind one lookup interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar", tag = "kind", rename_all = "snake_case")]
pub enum QBackend<S> {
    Table(QTable<S>),
    Dense {
        net: DenseQNet<S>,
        replay: ReplayBuffer,
    },
}

impl<S: Scalar> QBackend<S> {
    pub fn q_values(&self, lab: &Labyrinth, s: Position) -> [S; 4] {
        match self {
            QBackend::Table(t) => t.q_values(s),
            QBackend::Dense { net, .. } => net.q_values(lab, s),
        }
    }

    pub fn q_lookup(&self, lab: &Labyrinth, s: Position, a: Action) -> S {
        self.q_values(lab, s)[a.index()]
    }
}
