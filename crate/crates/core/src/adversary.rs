//! Simulated attacks on the channel.
//!
//! Eve is a passive steganalyst who knows the whole design but not the key:
//! she trains shadow systems from her own seeds and fits a cover-vs-stego
//! classifier on their episodes. Trudy perturbs episodes by replacing
//! actions with random ones.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Agent;
use crate::environment::Episode;
use crate::observer::{featurize, ObserverError, ObserverModel, SparseFeatures};
use crate::rng::stream;
use crate::stego::{build, build_cover_on, StegoError, StegoKey, StegoSystem};

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shadow key shares the target system's fingerprint")]
    KeyLeak,
    #[error(transparent)]
    Stego(#[from] StegoError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
}

/// Per-step probability of a forced random action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrudyConfig {
    pub p: f64,
}

impl TrudyConfig {
    pub fn new(p: f64) -> Result<Self, AdversaryError> {
        if (0.0..=1.0).contains(&p) {
            Ok(Self { p })
        } else {
            Err(AdversaryError::Probability(p))
        }
    }
}

/// Greedy rollout of a stego agent under Trudy's interference.
pub fn trudy_perturb_rollout<R: Rng + ?Sized>(sys: &StegoSystem, agent: usize, trudy: TrudyConfig, rng: &mut R) -> Episode {
    sys.agents[agent].perturbed_rollout(&sys.labyrinth, &sys.rewards, trudy.p, rng)
}

/// Cover vs stego confusion counts; rows are the true class, columns the
/// predicted one, index 0 = cover, 1 = stego.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
}

impl ConfusionMatrix {
    pub fn record(&mut self, actual_stego: bool, predicted_stego: bool) {
        self.counts[actual_stego as usize][predicted_stego as usize] += 1;
    }

    pub fn true_negative(&self) -> usize {
        self.counts[0][0]
    }

    pub fn false_positive(&self) -> usize {
        self.counts[0][1]
    }

    pub fn false_negative(&self) -> usize {
        self.counts[1][0]
    }

    pub fn true_positive(&self) -> usize {
        self.counts[1][1]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let mut out = *self;
        for r in 0..2 {
            for c in 0..2 {
                out.counts[r][c] += other.counts[r][c];
            }
        }
        out
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Detector metrics with stego as the positive class. Undefined ratios
/// (empty denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub confusion: ConfusionMatrix,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc_roc: Option<f64>,
    pub accuracy_cover: Option<f64>,
    pub accuracy_stego: Option<f64>,
    pub overall_accuracy: Option<f64>,
}

impl BinaryMetrics {
    pub fn from_confusion(confusion: ConfusionMatrix, auc_roc: Option<f64>) -> Self {
        let (tn, fp, fneg, tp) = (
            confusion.true_negative(),
            confusion.false_positive(),
            confusion.false_negative(),
            confusion.true_positive(),
        );
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Self {
            confusion,
            precision,
            recall,
            f1,
            auc_roc,
            accuracy_cover: ratio(tn, tn + fp),
            accuracy_stego: recall,
            overall_accuracy: ratio(tn + tp, confusion.total()),
        }
    }

    /// Thresholds `scores` (stego probabilities) at 0.5, ties to cover, and
    /// ranks them for the AUC.
    pub fn evaluate(actual_stego: &[bool], scores: &[f64]) -> Self {
        assert_eq!(actual_stego.len(), scores.len(), "one score per label");
        let mut confusion = ConfusionMatrix::default();
        for (&a, &s) in actual_stego.iter().zip(scores) {
            confusion.record(a, s > 0.5);
        }
        Self::from_confusion(confusion, auc_roc(actual_stego, scores))
    }

    pub const CSV_HEADER: [&'static str; 12] = [
        "phase",
        "tn",
        "fp",
        "fn",
        "tp",
        "precision",
        "recall",
        "f1_score",
        "auc_roc",
        "accuracy_cover",
        "accuracy_stego",
        "overall_accuracy",
    ];

    /// Fields in [`CSV_HEADER`](Self::CSV_HEADER) order; undefined values
    /// are empty.
    pub fn csv_record(&self, phase: &str) -> Vec<String> {
        let c = &self.confusion;
        let mut out = vec![
            phase.to_string(),
            c.true_negative().to_string(),
            c.false_positive().to_string(),
            c.false_negative().to_string(),
            c.true_positive().to_string(),
        ];
        for v in [
            self.precision,
            self.recall,
            self.f1,
            self.auc_roc,
            self.accuracy_cover,
            self.accuracy_stego,
            self.overall_accuracy,
        ] {
            out.push(v.map(|x| format!("{x:.4}")).unwrap_or_default());
        }
        out
    }
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the Mann-Whitney rank sum. `None` unless
/// both classes are present.
pub fn auc_roc(actual_stego: &[bool], scores: &[f64]) -> Option<f64> {
    let pos = actual_stego.iter().filter(|&&a| a).count();
    let neg = actual_stego.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(actual_stego).filter(|(_, &a)| a).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// Spearman rank correlation with tie-averaged ranks; `None` when either
/// side is constant or the lengths are below 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EveConfig {
    pub shadow_count: usize,
    /// Corpus episodes per class contributed by each shadow.
    pub episodes_per_class: usize,
    /// Trudy-style action noise applied to corpus and test rollouts so
    /// repeated greedy episodes are not all identical.
    pub rollout_noise: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Agents per shadow stego system.
    pub agents: usize,
    /// Episode budget of each shadow agent.
    pub episode_budget: usize,
}

impl Default for EveConfig {
    fn default() -> Self {
        Self {
            shadow_count: 4,
            episodes_per_class: 100,
            rollout_noise: 0.05,
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 50,
            agents: 2,
            episode_budget: crate::agent::AgentConfig::DEFAULT_BUDGET,
        }
    }
}

impl EveConfig {
    pub fn validate(&self) -> Result<(), AdversaryError> {
        if self.shadow_count == 0 {
            return Err(AdversaryError::Config("shadow_count must be at least 1".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(AdversaryError::Config("batch size and learning rate must be positive".into()));
        }
        TrudyConfig::new(self.rollout_noise)?;
        Ok(())
    }
}

/// One corpus entry.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub features: SparseFeatures<f64>,
    pub stego: bool,
}

/// Eve's steganalyser and the data it was fitted on.
#[derive(Debug, Clone)]
pub struct EveHarness {
    pub seed: u64,
    pub config: EveConfig,
    pub shadow_keys: Vec<StegoKey>,
    pub classifier: ObserverModel<f64>,
    pub corpus: Vec<CorpusEntry>,
    /// Set when a shadow key was supplied from outside (control runs).
    pub control: bool,
}

impl EveHarness {
    /// Blind harness: every shadow key, labyrinth included, derives from
    /// `seed`.
    pub fn new(seed: u64, config: EveConfig) -> Result<Self, AdversaryError> {
        config.validate()?;
        let shadow_keys: Vec<StegoKey> = (0..config.shadow_count)
            .map(|k| shadow_key(&mut stream(seed, "eve-shadow", k as u64), &config))
            .collect();
        let maze = &shadow_keys[0].maze;
        let classifier = ObserverModel::for_grid(2, maze.width, maze.height);
        Ok(Self {
            seed,
            classifier,
            config,
            shadow_keys,
            corpus: Vec::new(),
            control: false,
        })
    }

    /// Control harness whose first shadow is built from a leaked key.
    pub fn with_leaked_key(seed: u64, config: EveConfig, leaked: StegoKey) -> Result<Self, AdversaryError> {
        let mut eve = Self::new(seed, config)?;
        eve.shadow_keys[0] = leaked;
        eve.control = true;
        Ok(eve)
    }

    fn features(&self, ep: &Episode) -> SparseFeatures<f64> {
        let key = &self.shadow_keys[0];
        featurize(ep, key.maze.width, key.maze.height, key.agents[0].step_cap).to_sparse()
    }

    /// Stego probability of one episode.
    pub fn score(&self, ep: &Episode) -> f64 {
        self.classifier.predict_features(&self.features(ep))[1]
    }

    /// Builds the shadow systems, collects the corpus and fits the
    /// classifier; returns learning-phase metrics on that corpus.
    pub fn train(&mut self) -> Result<BinaryMetrics, AdversaryError> {
        let per_class = self.config.episodes_per_class;
        let noise = self.config.rollout_noise;
        let mut corpus = Vec::new();
        for (k, key) in self.shadow_keys.iter().enumerate() {
            let sys = build(key)?;
            let cover = build_cover_on(key, &sys.labyrinth)?;
            let mut rng = stream(self.seed, "eve-corpus", k as u64);
            for j in 0..per_class {
                let stego_ep = trudy_perturb_rollout(&sys, j % sys.agent_count(), TrudyConfig { p: noise }, &mut rng);
                corpus.push(CorpusEntry { features: self.features(&stego_ep), stego: true });
                let cover_ep = cover.perturbed_rollout(&sys.labyrinth, &sys.rewards, noise, &mut rng);
                corpus.push(CorpusEntry { features: self.features(&cover_ep), stego: false });
            }
        }
        self.corpus = corpus;
        self.fit()?;
        let labels: Vec<bool> = self.corpus.iter().map(|e| e.stego).collect();
        let scores: Vec<f64> = self.corpus.iter().map(|e| self.classifier.predict_features(&e.features)[1]).collect();
        Ok(BinaryMetrics::evaluate(&labels, &scores))
    }

    fn fit(&mut self) -> Result<(), AdversaryError> {
        if self.corpus.is_empty() {
            return Ok(());
        }
        let mut rng = stream(self.seed, "eve-fit", 0);
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        for _ in 0..self.config.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<(&[(usize, f64)], usize)> = chunk
                    .iter()
                    .map(|&i| (self.corpus[i].features.as_slice(), self.corpus[i].stego as usize))
                    .collect();
                self.classifier.fit_step(&batch, self.config.learning_rate)?;
            }
        }
        Ok(())
    }

    /// Classifies `trials` episodes from the target's stego agents (cycled)
    /// and `trials` from its cover agent.
    pub fn test<R: Rng + ?Sized>(
        &self,
        target: &StegoSystem,
        cover: &Agent<f64>,
        trials: usize,
        rng: &mut R,
    ) -> Result<BinaryMetrics, AdversaryError> {
        if !self.control && self.shadow_keys.iter().any(|k| k.fingerprint() == target.key_fingerprint) {
            return Err(AdversaryError::KeyLeak);
        }
        let noise = self.config.rollout_noise;
        let mut labels = Vec::with_capacity(2 * trials);
        let mut scores = Vec::with_capacity(2 * trials);
        for j in 0..trials {
            let ep = trudy_perturb_rollout(target, j % target.agent_count(), TrudyConfig { p: noise }, rng);
            labels.push(true);
            scores.push(self.score(&ep));
            let ep = cover.perturbed_rollout(&target.labyrinth, &target.rewards, noise, rng);
            labels.push(false);
            scores.push(self.score(&ep));
        }
        Ok(BinaryMetrics::evaluate(&labels, &scores))
    }
}

fn shadow_key<R: Rng + ?Sized>(rng: &mut R, config: &EveConfig) -> StegoKey {
    let master: u64 = rng.random();
    let maze: u64 = rng.random();
    StegoKey::with_agents(master, maze, config.agents).with_budget(config.episode_budget)
}

/// Completion and length statistics of one agent at one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub trials: usize,
    pub completed: usize,
    /// Mean steps over completed episodes.
    pub mean_timesteps: Option<f64>,
    /// Stego agents only; over completed episodes.
    pub identifiability: Option<f64>,
}

impl RolloutStats {
    pub fn completion(&self) -> Option<f64> {
        ratio(self.completed, self.trials)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub stochasticity: f64,
    pub cover: RolloutStats,
    pub agents: Vec<RolloutStats>,
}

impl RobustnessRow {
    /// Column names for a system with `agents` stego agents.
    pub fn csv_header(agents: usize) -> Vec<String> {
        let mut h = vec!["stochasticity".to_string(), "cover_completion".into(), "cover_timesteps".into()];
        for i in 0..agents {
            h.push(format!("agent{i}_completion"));
            h.push(format!("agent{i}_timesteps"));
            h.push(format!("agent{i}_identifiability"));
        }
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut out = vec![format!("{:.2}", self.stochasticity), f(self.cover.completion()), f(self.cover.mean_timesteps)];
        for a in &self.agents {
            out.push(f(a.completion()));
            out.push(f(a.mean_timesteps));
            out.push(f(a.identifiability));
        }
        out
    }
}

fn collect_stats(eps: impl Iterator<Item = (Episode, Option<bool>)>) -> RolloutStats {
    let (mut trials, mut completed, mut steps, mut hits, mut judged) = (0, 0, 0usize, 0, 0);
    for (ep, identified) in eps {
        trials += 1;
        if ep.completed {
            completed += 1;
            steps += ep.steps;
            if let Some(hit) = identified {
                judged += 1;
                hits += hit as usize;
            }
        }
    }
    RolloutStats {
        trials,
        completed,
        mean_timesteps: ratio(steps, completed),
        identifiability: ratio(hits, judged),
    }
}

/// Completion, timesteps and identifiability for the cover agent and each
/// stego agent at every noise level. Row `k` draws from
/// `stream(seed, "trudy", k)`.
pub fn robustness_sweep(
    sys: &StegoSystem,
    cover: &Agent<f64>,
    p_values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>, AdversaryError> {
    if p_values.is_empty() {
        return Err(AdversaryError::Config("p_values must not be empty".into()));
    }
    p_values
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let trudy = TrudyConfig::new(p)?;
            let mut rng = stream(seed, "trudy", k as u64);
            let cover_stats = collect_stats(
                (0..trials).map(|_| (cover.perturbed_rollout(&sys.labyrinth, &sys.rewards, p, &mut rng), None)),
            );
            let agents = (0..sys.agent_count())
                .map(|i| {
                    let eps: Vec<Episode> = (0..trials).map(|_| trudy_perturb_rollout(sys, i, trudy, &mut rng)).collect();
                    collect_stats(eps.into_iter().map(|ep| {
                        let hit = sys.identify(&ep) == i;
                        (ep, Some(hit))
                    }))
                })
                .collect();
            Ok(RobustnessRow { stochasticity: p, cover: cover_stats, agents })
        })
        .collect()
}
