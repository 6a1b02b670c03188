//! The steganographic protocol.
//!
//! A [`StegoKey`] fixes every seed and hyper-parameter. From it both parties
//! regenerate the labyrinth and jointly train `n` agents and the observer:
//! agent `i` is rewarded when the observer attributes its completed episode
//! to identity `i`. A message is sent as a sequence of greedy episodes, one
//! per `log2 n` bit symbol, and read back by classifying each episode.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError};
use crate::environment::{Episode, RewardSpec};
use crate::labyrinth::{generate, GenerateConfig, Labyrinth, LabyrinthError};
use crate::observer::{featurize, LabelledEpisode, LabelledEpisodeStore, ObserverError, ObserverModel, TrajectoryFeatures};
use crate::rng::{seeded, stream};

#[derive(Debug, Error, PartialEq)]
pub enum StegoError {
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error(transparent)]
    Labyrinth(#[from] LabyrinthError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error("training failed: agent {agent}'s greedy episode does not reach the goal")]
    TrainingFailure { agent: usize },
    #[error("encoding failed: agent {agent}'s greedy episode hit the step cap")]
    EncodeFailure { agent: usize },
    #[error("a single-agent system carries no bits")]
    ZeroCapacity,
    #[error("frame header is inconsistent: {0}")]
    Frame(String),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("decode failed: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub learning_rate: f64,
    pub capacity_per_class: usize,
    pub batch_size: usize,
    /// Fit steps per new labelled episode.
    pub fit_steps_per_episode: usize,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            capacity_per_class: LabelledEpisodeStore::<f64>::DEFAULT_CAPACITY,
            batch_size: 32,
            fit_steps_per_episode: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSchedule {
    /// Rounds at the start with no steganographic reward.
    pub warmup_rounds: usize,
    /// Grant `-stego_reward` on misidentified completed episodes.
    pub penalize_misidentification: bool,
}

impl Default for JointSchedule {
    fn default() -> Self {
        Self { warmup_rounds: 200, penalize_misidentification: true }
    }
}

/// Shared secret: all seeds and hyper-parameters of a stego system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StegoKey {
    pub version: u32,
    pub master_seed: u64,
    pub maze_seed: u64,
    pub maze: GenerateConfig,
    pub rewards: RewardSpec,
    /// One per agent identity; `agents.len()` is the identity count `n`.
    pub agents: Vec<AgentConfig>,
    /// Baseline agent trained without steganographic feedback.
    pub cover: AgentConfig,
    pub observer: ObserverConfig,
    pub schedule: JointSchedule,
}

impl StegoKey {
    pub const VERSION: u32 = 1;

    /// Default two-agent tabular key.
    pub fn new(master_seed: u64, maze_seed: u64) -> Self {
        Self::with_agents(master_seed, maze_seed, 2)
    }

    pub fn with_agents(master_seed: u64, maze_seed: u64, n: usize) -> Self {
        Self {
            version: Self::VERSION,
            master_seed,
            maze_seed,
            maze: GenerateConfig::default(),
            rewards: RewardSpec::default(),
            agents: (0..n).map(AgentConfig::table).collect(),
            cover: AgentConfig::table(0),
            observer: ObserverConfig::default(),
            schedule: JointSchedule::default(),
        }
    }

    /// Sets every agent's episode budget (and hence the round count).
    pub fn with_budget(mut self, episodes: usize) -> Self {
        self.agents = self.agents.into_iter().map(|c| c.with_budget(episodes)).collect();
        self.cover = self.cover.with_budget(episodes);
        self
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Bits carried by one episode.
    pub fn bits_per_episode(&self) -> usize {
        self.agent_count().trailing_zeros() as usize
    }

    pub fn rounds(&self) -> usize {
        self.agents.first().map_or(0, |c| c.episode_budget)
    }

    pub fn validate(&self) -> Result<(), StegoError> {
        let bad = |m: String| Err(StegoError::InvalidKey(m));
        if self.version != Self::VERSION {
            return Err(StegoError::Version(self.version));
        }
        let n = self.agent_count();
        if n == 0 || !n.is_power_of_two() {
            return bad(format!("agent count {n} is not a power of two"));
        }
        for (i, c) in self.agents.iter().enumerate() {
            if c.agent_id != i {
                return bad(format!("agent config {i} carries id {}", c.agent_id));
            }
            if c.episode_budget != self.rounds() {
                return bad("agents must share one episode budget".into());
            }
            c.validate()?;
        }
        self.cover.validate()?;
        self.maze.rules.validate()?;
        self.rewards.validate().map_err(StegoError::InvalidKey)?;
        let o = &self.observer;
        if !(o.learning_rate > 0.0) || o.capacity_per_class == 0 || o.batch_size == 0 {
            return bad("observer learning rate, capacity and batch size must be positive".into());
        }
        Ok(())
    }

    /// Canonical serialization; field order is fixed by the struct layout.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("keys serialize")
    }

    pub fn from_json(json: &str) -> Result<Self, StegoError> {
        let key: StegoKey = serde_json::from_str(json).map_err(|e| StegoError::Decode(e.to_string()))?;
        if key.version != Self::VERSION {
            return Err(StegoError::Version(key.version));
        }
        Ok(key)
    }

    /// SHA-256 over the compact canonical serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("keys serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn labyrinth(&self) -> Result<Labyrinth, StegoError> {
        Ok(generate(&self.maze, &mut seeded(self.maze_seed))?.labyrinth)
    }
}

/// Trained agents and observer for one key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StegoSystem {
    pub version: u32,
    pub key_fingerprint: String,
    pub labyrinth: Labyrinth,
    pub rewards: RewardSpec,
    pub agents: Vec<Agent<f64>>,
    pub observer: ObserverModel<f64>,
}

/// Per-round training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub returns: Vec<f64>,
    pub steps: Vec<usize>,
    pub completed: Vec<bool>,
    /// Whether each completed episode was attributed to its own agent.
    pub identified: Vec<bool>,
    pub observer_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rounds: Vec<RoundLog>,
}

impl StegoSystem {
    pub const VERSION: u32 = 1;

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn bits_per_episode(&self) -> usize {
        self.agent_count().trailing_zeros() as usize
    }

    pub fn features(&self, ep: &Episode) -> TrajectoryFeatures {
        let step_cap = self.agents.first().map_or(1, |a| a.config.step_cap);
        featurize(ep, self.labyrinth.width(), self.labyrinth.height(), step_cap)
    }

    /// Observer distribution over identities for `ep`.
    pub fn predict(&self, ep: &Episode) -> Vec<f64> {
        self.observer.predict(&self.features(ep))
    }

    pub fn identify(&self, ep: &Episode) -> usize {
        self.observer.classify(&self.features(ep))
    }

    pub fn greedy_episode(&self, agent: usize) -> Episode {
        self.agents[agent].greedy_rollout(&self.labyrinth, &self.rewards)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("systems serialize")
    }

    pub fn from_json(json: &str) -> Result<Self, StegoError> {
        let sys: StegoSystem = serde_json::from_str(json).map_err(|e| StegoError::Decode(e.to_string()))?;
        if sys.version != Self::VERSION {
            return Err(StegoError::Version(sys.version));
        }
        Ok(sys)
    }
}

pub fn build(key: &StegoKey) -> Result<StegoSystem, StegoError> {
    build_logged(key).map(|(sys, _)| sys)
}

/// Jointly trains the agents and the observer.
///
/// Each round every agent plays one exploratory episode; after the warm-up
/// the observer's current verdict decides the steganographic reward.
/// Completed episodes enter the labelled store, then the observer takes
/// `fit_steps_per_episode` balanced steps per new episode.
pub fn build_logged(key: &StegoKey) -> Result<(StegoSystem, TrainingLog), StegoError> {
    key.validate()?;
    build_logged_on(key, key.labyrinth()?)
}

/// [`build_logged`] on a given labyrinth instead of the key's own.
pub fn build_logged_on(key: &StegoKey, lab: Labyrinth) -> Result<(StegoSystem, TrainingLog), StegoError> {
    key.validate()?;
    let n = key.agent_count();
    let mut agents = Vec::with_capacity(n);
    let mut agent_rngs = Vec::with_capacity(n);
    for (i, config) in key.agents.iter().enumerate() {
        agents.push(Agent::<f64>::new(config.clone(), &lab, &mut stream(key.master_seed, "agent-init", i as u64))?);
        agent_rngs.push(stream(key.master_seed, "agent", i as u64));
    }
    let mut observer = ObserverModel::<f64>::for_grid(n, lab.width(), lab.height());
    let mut store = LabelledEpisodeStore::<f64>::new(n, key.observer.capacity_per_class);
    let mut observer_rng = stream(key.master_seed, "observer", 0);
    let step_cap = key.agents[0].step_cap;
    let stego = key.rewards.stego_reward;
    let mut log = TrainingLog::default();

    for round in 0..key.rounds() {
        let rewarded = round >= key.schedule.warmup_rounds;
        let mut entry = RoundLog {
            round,
            returns: Vec::with_capacity(n),
            steps: Vec::with_capacity(n),
            completed: Vec::with_capacity(n),
            identified: Vec::with_capacity(n),
            observer_loss: None,
        };
        let mut fresh = 0;
        for (i, agent) in agents.iter_mut().enumerate() {
            let mut verdict = None;
            let feedback = |ep: &Episode| {
                let x = featurize(ep, lab.width(), lab.height(), step_cap).to_sparse::<f64>();
                let hit = crate::num::argmax(&observer.predict_features(&x)) == i;
                verdict = Some((hit, x));
                match (rewarded, hit, key.schedule.penalize_misidentification) {
                    (false, _, _) => None,
                    (true, true, _) => Some(stego),
                    (true, false, true) => Some(-stego),
                    (true, false, false) => None,
                }
            };
            let ep = agent.train_episode(&lab, &key.rewards, Some(feedback), &mut agent_rngs[i])?;
            entry.returns.push(ep.total_reward());
            entry.steps.push(ep.steps);
            entry.completed.push(ep.completed);
            entry.identified.push(verdict.as_ref().is_some_and(|(hit, _)| *hit));
            if let Some((_, features)) = verdict {
                store.push(LabelledEpisode { episode: ep, features, label: i });
                fresh += 1;
            }
        }
        let steps = fresh * key.observer.fit_steps_per_episode;
        if steps > 0 {
            let mut total = 0.0;
            for _ in 0..steps {
                let batch = store.sample_balanced(key.observer.batch_size, &mut observer_rng);
                let pairs: Vec<(&[(usize, f64)], usize)> =
                    batch.iter().map(|e| (e.features.as_slice(), e.label)).collect();
                total += observer.fit_step(&pairs, key.observer.learning_rate)?;
            }
            entry.observer_loss = Some(total / steps as f64);
        }
        log.rounds.push(entry);
    }

    let sys = StegoSystem {
        version: StegoSystem::VERSION,
        key_fingerprint: key.fingerprint(),
        labyrinth: lab,
        rewards: key.rewards.clone(),
        agents,
        observer,
    };
    for i in 0..n {
        if !sys.greedy_episode(i).completed {
            return Err(StegoError::TrainingFailure { agent: i });
        }
    }
    Ok((sys, log))
}

/// Baseline agent for the key's labyrinth, trained without steganographic
/// feedback from its own stream.
pub fn build_cover(key: &StegoKey) -> Result<Agent<f64>, StegoError> {
    key.validate()?;
    build_cover_on(key, &key.labyrinth()?)
}

pub fn build_cover_on(key: &StegoKey, lab: &Labyrinth) -> Result<Agent<f64>, StegoError> {
    key.validate()?;
    let mut agent = Agent::new(key.cover.clone(), lab, &mut stream(key.master_seed, "cover-init", 0))?;
    agent.train_cover(lab, &key.rewards, &mut stream(key.master_seed, "cover", 0))?;
    Ok(agent)
}

/// A bit string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub bits: Vec<bool>,
}

impl Message {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self { bits: (0..len).map(|_| rng.random()).collect() }
    }

    pub fn bit_errors(&self, other: &Message) -> usize {
        let common = self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count();
        common + self.len().abs_diff(other.len())
    }
}

impl FromStr for Message {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("invalid bit {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Message::new)
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Big-endian symbols of `k` bits; the final partial symbol is padded with
/// zeros.
pub fn pack_symbols(m: &Message, k: usize) -> Vec<usize> {
    m.bits
        .chunks(k)
        .map(|chunk| (0..k).fold(0, |acc, j| (acc << 1) | chunk.get(j).copied().unwrap_or(false) as usize))
        .collect()
}

pub fn unpack_symbols(symbols: &[usize], k: usize) -> Message {
    Message::new(
        symbols
            .iter()
            .flat_map(|&s| (0..k).rev().map(move |j| (s >> j) & 1 == 1))
            .collect(),
    )
}

/// One greedy episode per symbol of `m`; no framing.
pub fn encode(sys: &StegoSystem, m: &Message) -> Result<Vec<Episode>, StegoError> {
    let k = sys.bits_per_episode();
    if m.is_empty() {
        return Ok(Vec::new());
    }
    if k == 0 {
        return Err(StegoError::ZeroCapacity);
    }
    let greedy: Vec<Episode> = (0..sys.agent_count()).map(|i| sys.greedy_episode(i)).collect();
    pack_symbols(m, k)
        .into_iter()
        .map(|s| {
            let ep = &greedy[s];
            if ep.completed {
                Ok(ep.clone())
            } else {
                Err(StegoError::EncodeFailure { agent: s })
            }
        })
        .collect()
}

/// Reads one symbol per episode (the observer's most probable identity).
pub fn decode(sys: &StegoSystem, eps: &[Episode]) -> Message {
    let symbols: Vec<usize> = eps.iter().map(|ep| sys.identify(ep)).collect();
    unpack_symbols(&symbols, sys.bits_per_episode())
}

pub const HEADER_BITS: usize = 32;

/// Prepends the payload length as a 32-bit big-endian header.
pub fn frame(m: &Message) -> Message {
    let len = u32::try_from(m.len()).expect("messages are shorter than 2^32 bits");
    let mut bits: Vec<bool> = (0..HEADER_BITS).rev().map(|j| (len >> j) & 1 == 1).collect();
    bits.extend_from_slice(&m.bits);
    Message::new(bits)
}

/// Strips the header and the zero padding of the final symbol. Fails if the
/// header disagrees with the number of received bits.
pub fn unframe(received: &Message, bits_per_symbol: usize) -> Result<Message, StegoError> {
    if received.len() < HEADER_BITS {
        return Err(StegoError::Frame(format!("{} bits received, header needs {HEADER_BITS}", received.len())));
    }
    let len = received.bits[..HEADER_BITS].iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
    let available = received.len() - HEADER_BITS;
    if len > available {
        return Err(StegoError::Frame(format!("header announces {len} bits, {available} received")));
    }
    if available - len >= bits_per_symbol.max(1) {
        return Err(StegoError::Frame(format!(
            "header announces {len} bits but {available} arrived (more than one symbol of padding)"
        )));
    }
    if received.bits[HEADER_BITS + len..].iter().any(|&b| b) {
        return Err(StegoError::Frame("non-zero padding".into()));
    }
    Ok(Message::new(received.bits[HEADER_BITS..HEADER_BITS + len].to_vec()))
}

/// Framed transmission: header plus payload, one episode per symbol.
pub fn send(sys: &StegoSystem, m: &Message) -> Result<Vec<Episode>, StegoError> {
    encode(sys, &frame(m))
}

pub fn receive(sys: &StegoSystem, eps: &[Episode]) -> Result<Message, StegoError> {
    unframe(&decode(sys, eps), sys.bits_per_episode())
}

/// Outcome counts of an identifiability measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Identifiability {
    pub trials: usize,
    pub completed: usize,
    pub identified: usize,
}

impl Identifiability {
    /// Fraction of completed episodes attributed to the right agent.
    pub fn fraction(&self) -> Option<f64> {
        (self.completed > 0).then(|| self.identified as f64 / self.completed as f64)
    }

    pub fn merge(self, other: Identifiability) -> Identifiability {
        Identifiability {
            trials: self.trials + other.trials,
            completed: self.completed + other.completed,
            identified: self.identified + other.identified,
        }
    }
}

/// Rolls out `agent` `trials` times (greedy, or perturbed with action noise
/// `p` when `noise` is given) and counts how often the observer names it,
/// over completed episodes only.
pub fn identifiability<R: Rng + ?Sized>(
    sys: &StegoSystem,
    agent: usize,
    trials: usize,
    noise: Option<(f64, &mut R)>,
) -> Identifiability {
    let mut out = Identifiability { trials, ..Default::default() };
    let mut tally = |ep: &Episode| {
        if ep.completed {
            out.completed += 1;
            out.identified += (sys.identify(ep) == agent) as usize;
        }
    };
    match noise {
        None => {
            let ep = sys.greedy_episode(agent);
            for _ in 0..trials {
                tally(&ep);
            }
        }
        Some((p, rng)) => {
            for _ in 0..trials {
                let ep = sys.agents[agent].perturbed_rollout(&sys.labyrinth, &sys.rewards, p, rng);
                tally(&ep);
            }
        }
    }
    out
}
