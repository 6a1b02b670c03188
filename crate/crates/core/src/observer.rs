//! Trajectory classifier: maps an episode to a probability distribution
//! over agent identities.
//!
//! Episodes are summarised by per-cell visit counts, per-(cell, action)
//! transition counts and the normalized length. Counts are divided by
//! `T + 1` before entering a multinomial logistic model trained by
//! cross-entropy. The features are sparse (at most `2T + 2` non-zeros), so
//! the model works on `(index, value)` lists.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Action, Episode};
use crate::num::{argmax, softmax, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum ObserverError {
    #[error("non-finite cross-entropy loss ({0})")]
    NonFiniteLoss(f64),
    #[error("empty training batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot decode failed: {0}")]
    Decode(String),
}

/// Raw count summary of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFeatures {
    pub cells: usize,
    /// Visits per cell, start included; sums to `T + 1`.
    pub visits: Vec<u32>,
    /// Moves per `(cell, action)`, indexed `cell * 4 + action`; sums to `T`.
    pub transitions: Vec<u32>,
    /// `T / step_cap`.
    pub normalized_length: f64,
    pub steps: usize,
}

impl TrajectoryFeatures {
    pub fn dim(cells: usize) -> usize {
        cells * (1 + Action::COUNT) + 1
    }

    /// Scaled dense vector: counts divided by `T + 1`, then the normalized
    /// length.
    pub fn to_dense(&self) -> Vec<f64> {
        let scale = 1.0 / (self.steps as f64 + 1.0);
        self.visits
            .iter()
            .chain(&self.transitions)
            .map(|&c| c as f64 * scale)
            .chain(std::iter::once(self.normalized_length))
            .collect()
    }

    /// Non-zero entries of [`to_dense`](Self::to_dense), ascending index.
    pub fn to_sparse<S: Scalar>(&self) -> SparseFeatures<S> {
        self.to_dense()
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .map(|(i, v)| (i, S::of(v)))
            .collect()
    }
}

pub type SparseFeatures<S> = Vec<(usize, S)>;

/// Counts visits and moves. Episodes index cells by the labyrinth's
/// row-major order, so `width` is needed to flatten positions.
pub fn featurize(ep: &Episode, width: usize, height: usize, step_cap: usize) -> TrajectoryFeatures {
    let cells = width * height;
    let mut visits = vec![0u32; cells];
    let mut transitions = vec![0u32; cells * Action::COUNT];
    for p in &ep.positions {
        visits[p.row * width + p.col] += 1;
    }
    for (p, a) in ep.positions.iter().zip(&ep.actions) {
        transitions[(p.row * width + p.col) * Action::COUNT + a.index()] += 1;
    }
    TrajectoryFeatures {
        cells,
        visits,
        transitions,
        normalized_length: ep.steps as f64 / step_cap as f64,
        steps: ep.steps,
    }
}

/// Affine map from features to `classes` scores followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ObserverModel<S> {
    pub classes: usize,
    pub dim: usize,
    /// Row-major `classes x dim`.
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ObserverSnapshot<S> {
    pub version: u32,
    pub model: ObserverModel<S>,
}

impl<S: Scalar> ObserverModel<S> {
    pub const SNAPSHOT_VERSION: u32 = 1;

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![S::zero(); classes * dim],
            bias: vec![S::zero(); classes],
        }
    }

    pub fn for_grid(classes: usize, width: usize, height: usize) -> Self {
        Self::zeros(classes, TrajectoryFeatures::dim(width * height))
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Flat parameter access, weights then bias.
    pub fn param(&self, i: usize) -> S {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias[i - self.weights.len()]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut S {
        if i < self.weights.len() {
            &mut self.weights[i]
        } else {
            &mut self.bias[i - self.weights.len()]
        }
    }

    pub fn scores(&self, x: &[(usize, S)]) -> Vec<S> {
        (0..self.classes)
            .map(|k| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + x.iter().map(|&(i, v)| row[i] * v).sum::<S>()
            })
            .collect()
    }

    pub fn predict_features(&self, x: &[(usize, S)]) -> Vec<S> {
        softmax(&self.scores(x))
    }

    pub fn predict(&self, features: &TrajectoryFeatures) -> Vec<S> {
        self.predict_features(&features.to_sparse())
    }

    /// Most probable identity, lowest index on ties.
    pub fn classify(&self, features: &TrajectoryFeatures) -> usize {
        argmax(&self.predict(features))
    }

    /// Mean cross-entropy over the batch and its gradient in the flat
    /// parameter layout of [`param`](Self::param).
    pub fn loss_and_gradient(&self, batch: &[(&[(usize, S)], usize)]) -> (S, Vec<S>) {
        let mut grad = vec![S::zero(); self.param_count()];
        let n = S::of(batch.len() as f64);
        let mut loss = S::zero();
        let bias_offset = self.weights.len();
        for &(x, label) in batch {
            let p = self.predict_features(x);
            let pl = p[label];
            loss -= if pl.is_nan() { pl } else { pl.max(S::min_positive_value()).ln() };
            for k in 0..self.classes {
                let delta = (p[k] - if k == label { S::one() } else { S::zero() }) / n;
                if delta == S::zero() {
                    continue;
                }
                for &(i, v) in x {
                    grad[k * self.dim + i] += delta * v;
                }
                grad[bias_offset + k] += delta;
            }
        }
        (loss / n, grad)
    }

    /// One gradient-descent step; returns the pre-update mean loss.
    pub fn fit_step(&mut self, batch: &[(&[(usize, S)], usize)], learning_rate: S) -> Result<S, ObserverError> {
        if batch.is_empty() {
            return Err(ObserverError::EmptyBatch);
        }
        if let Some(&(_, label)) = batch.iter().find(|&&(_, l)| l >= self.classes) {
            return Err(ObserverError::BadLabel { label, classes: self.classes });
        }
        let (loss, grad) = self.loss_and_gradient(batch);
        if !loss.is_finite() {
            return Err(ObserverError::NonFiniteLoss(loss.as_f64()));
        }
        for (i, g) in grad.into_iter().enumerate() {
            if g != S::zero() {
                *self.param_mut(i) -= learning_rate * g;
            }
        }
        Ok(loss)
    }

    pub fn to_json(&self) -> String {
        let snap = ObserverSnapshot { version: Self::SNAPSHOT_VERSION, model: self.clone() };
        serde_json::to_string(&snap).expect("observer snapshots serialize")
    }

    pub fn from_json(json: &str) -> Result<Self, ObserverError> {
        let snap: ObserverSnapshot<S> = serde_json::from_str(json).map_err(|e| ObserverError::Decode(e.to_string()))?;
        if snap.version != Self::SNAPSHOT_VERSION {
            return Err(ObserverError::Version(snap.version));
        }
        Ok(snap.model)
    }
}

/// A labelled episode with its cached sparse features.
#[derive(Debug, Clone)]
pub struct LabelledEpisode<S> {
    pub episode: Episode,
    pub features: SparseFeatures<S>,
    pub label: usize,
}

/// Per-class bounded FIFOs of recent labelled episodes.
#[derive(Debug, Clone)]
pub struct LabelledEpisodeStore<S> {
    capacity_per_class: usize,
    classes: Vec<VecDeque<LabelledEpisode<S>>>,
}

impl<S: Scalar> LabelledEpisodeStore<S> {
    pub const DEFAULT_CAPACITY: usize = 512;

    pub fn new(classes: usize, capacity_per_class: usize) -> Self {
        assert!(capacity_per_class > 0, "store capacity must be positive");
        Self {
            capacity_per_class,
            classes: (0..classes).map(|_| VecDeque::new()).collect(),
        }
    }

    pub fn push(&mut self, item: LabelledEpisode<S>) {
        let q = &mut self.classes[item.label];
        if q.len() == self.capacity_per_class {
            q.pop_front();
        }
        q.push_back(item);
    }

    pub fn class_len(&self, label: usize) -> usize {
        self.classes[label].len()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabelledEpisode<S>> {
        self.classes.iter().flatten()
    }

    /// Balanced batch: classes are visited round-robin (empty ones skipped)
    /// and an entry is drawn uniformly within each.
    pub fn sample_balanced<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<&LabelledEpisode<S>> {
        let nonempty: Vec<&VecDeque<LabelledEpisode<S>>> = self.classes.iter().filter(|q| !q.is_empty()).collect();
        if nonempty.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|i| {
                let q = nonempty[i % nonempty.len()];
                &q[rng.random_range(0..q.len())]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{rollout, RewardSpec};
    use crate::labyrinth::{Labyrinth, Position};
    use crate::rng::seeded;

    fn path(lab: &Labyrinth, moves: &[Action]) -> Episode {
        let mut i = 0;
        rollout(lab, &RewardSpec::default(), moves.len(), &mut seeded(0), |_, _| {
            i += 1;
            moves[i - 1]
        })
    }

    fn staircase(first: Action, second: Action) -> Vec<Action> {
        (0..14).map(|i| if i % 2 == 0 { first } else { second }).collect()
    }

    #[test]
    fn degenerate_episode_features() {
        let grid = crate::labyrinth::Grid::filled(8, 8, false);
        let lab = Labyrinth::new(grid, Position::new(0, 0), Position::new(0, 0)).unwrap();
        let ep = rollout(&lab, &RewardSpec::default(), 140, &mut seeded(0), |_, _| Action::Up);
        assert_eq!(ep.steps, 0);
        assert!(ep.completed);
        let f = featurize(&ep, 8, 8, 140);
        assert_eq!(f.visits[0], 1);
        assert_eq!(f.visits.iter().sum::<u32>(), 1);
        assert!(f.transitions.iter().all(|&c| c == 0));
        assert_eq!(f.normalized_length, 0.0);
    }

    #[test]
    fn optimal_episode_count_sums() {
        let lab = Labyrinth::open(8, 8);
        let ep = path(&lab, &staircase(Action::Up, Action::Right));
        assert_eq!(ep.steps, 14);
        let f = featurize(&ep, 8, 8, 140);
        assert_eq!(f.visits.iter().sum::<u32>(), 15);
        assert_eq!(f.transitions.iter().sum::<u32>(), 14);
        assert_eq!(f.to_dense().len(), 321);
        assert_eq!(TrajectoryFeatures::dim(64), 321);
    }

    #[test]
    fn move_order_changes_transition_features() {
        // Around one square: Up then Right vs Right then Up share the same
        // start/end but not the same cell set; use a loop that revisits.
        let lab = Labyrinth::open(8, 8);
        let a = path(&lab, &[Action::Up, Action::Right, Action::Down, Action::Left]);
        let b = path(&lab, &[Action::Right, Action::Up, Action::Left, Action::Down]);
        let fa = featurize(&a, 8, 8, 140);
        let fb = featurize(&b, 8, 8, 140);
        assert_eq!(fa.visits, fb.visits);
        assert_ne!(fa.transitions, fb.transitions);
        // (0,0) Up in `a`, (0,0) Right in `b`.
        assert_eq!(fa.transitions[Action::Up.index()], 1);
        assert_eq!(fb.transitions[Action::Right.index()], 1);
    }

    #[test]
    fn zero_model_is_uniform() {
        let lab = Labyrinth::open(8, 8);
        let ep = path(&lab, &staircase(Action::Up, Action::Right));
        for n in [2, 3, 4] {
            let m = ObserverModel::<f64>::for_grid(n, 8, 8);
            let p = m.predict(&featurize(&ep, 8, 8, 140));
            assert!(p.iter().all(|&x| (x - 1.0 / n as f64).abs() < 1e-15));
        }
    }

    #[test]
    fn separable_pair_is_learned() {
        let lab = Labyrinth::open(8, 8);
        let a = featurize(&path(&lab, &staircase(Action::Up, Action::Right)), 8, 8, 140).to_sparse::<f64>();
        let b = featurize(&path(&lab, &staircase(Action::Right, Action::Up)), 8, 8, 140).to_sparse::<f64>();
        let mut m = ObserverModel::<f64>::for_grid(2, 8, 8);
        let batch = [(a.as_slice(), 0), (b.as_slice(), 1)];
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let loss = m.fit_step(&batch, 0.5).unwrap();
            assert!(loss <= last + 1e-12);
            last = loss;
        }
        assert!(m.predict_features(&a)[0] > 0.9);
        assert!(m.predict_features(&b)[1] > 0.9);
    }

    #[test]
    fn confident_model_barely_moves() {
        let x: SparseFeatures<f64> = vec![(0, 1.0)];
        let mut m = ObserverModel::<f64>::zeros(2, 4);
        m.weights[0] = 40.0;
        let before = m.clone();
        let loss = m.fit_step(&[(x.as_slice(), 0)], 0.05).unwrap();
        assert!(loss < 1e-15);
        for i in 0..m.param_count() {
            assert!((m.param(i) - before.param(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_batches_are_rejected() {
        let mut m = ObserverModel::<f64>::zeros(2, 4);
        assert_eq!(m.fit_step(&[], 0.1), Err(ObserverError::EmptyBatch));
        let x: SparseFeatures<f64> = vec![(1, 1.0)];
        assert_eq!(
            m.fit_step(&[(x.as_slice(), 2)], 0.1),
            Err(ObserverError::BadLabel { label: 2, classes: 2 })
        );
        let inf: SparseFeatures<f64> = vec![(1, f64::INFINITY)];
        m.weights[1] = 1.0;
        assert!(matches!(m.fit_step(&[(inf.as_slice(), 1)], 0.1), Err(ObserverError::NonFiniteLoss(_))));
    }

    #[test]
    fn store_is_bounded_and_balanced() {
        let lab = Labyrinth::open(8, 8);
        let ep = path(&lab, &staircase(Action::Up, Action::Right));
        let mut store = LabelledEpisodeStore::<f64>::new(2, 3);
        for _ in 0..5 {
            store.push(LabelledEpisode { episode: ep.clone(), features: vec![], label: 0 });
        }
        assert_eq!(store.class_len(0), 3);
        let only_zero = store.sample_balanced(4, &mut seeded(0));
        assert!(only_zero.iter().all(|e| e.label == 0));
        store.push(LabelledEpisode { episode: ep, features: vec![], label: 1 });
        let batch = store.sample_balanced(6, &mut seeded(0));
        assert_eq!(batch.iter().filter(|e| e.label == 1).count(), 3);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut m = ObserverModel::<f32>::for_grid(2, 8, 8);
        m.weights[5] = 0.25;
        let back = ObserverModel::<f32>::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
