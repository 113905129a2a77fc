//! Dual-curriculum engine: prioritised replay with staleness mixing plus a
//! mutation hook on replayed levels.
//!
//! Replay probabilities mix a rank-based scoring distribution with a
//! staleness distribution; a Bernoulli gate decides between replaying from
//! the buffer and sampling a fresh training level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{mutate_level, EnvLevel};
use crate::modal::ModalModel;
use crate::{Error, Result};

/// Learning-potential scoring variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Mean absolute GAE over the trajectory.
    AbsGae,
    /// Mean positively-clipped GAE.
    PositiveValueLoss,
}

/// Curriculum hyperparameters; defaults follow the published training setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    /// Probability of replaying from the buffer rather than sampling fresh.
    pub replay_rate: f64,
    /// Probability of mutating a replayed level.
    pub edit_rate: f64,
    /// Buffer capacity.
    pub buffer_size: usize,
    /// Rank-prioritisation temperature.
    pub beta: f64,
    /// Staleness mixing coefficient.
    pub rho: f64,
    /// Sensors relocated per mutation.
    pub n_edits: usize,
    pub scoring: ScoringMode,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            replay_rate: 0.8,
            edit_rate: 1.0,
            buffer_size: 15,
            beta: 0.3,
            rho: 0.3,
            n_edits: 1,
            scoring: ScoringMode::PositiveValueLoss,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.replay_rate) {
            return Err(Error::InvalidConfig(format!(
                "replay_rate must be in [0,1], got {}",
                self.replay_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.edit_rate) {
            return Err(Error::InvalidConfig(format!(
                "edit_rate must be in [0,1], got {}",
                self.edit_rate
            )));
        }
        if self.buffer_size == 0 {
            return Err(Error::InvalidConfig("buffer_size must be >= 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho must be in [0,1], got {}",
                self.rho
            )));
        }
        if self.n_edits == 0 {
            return Err(Error::InvalidConfig("n_edits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning-potential score of one trajectory from its TD errors.
pub fn score_trajectory(deltas: &[f64], gamma: f64, lambda: f64, mode: ScoringMode) -> f64 {
    assert!(!deltas.is_empty(), "empty trajectory");
    let gl = gamma * lambda;
    let mut acc = 0.0;
    let mut total = 0.0;
    for &d in deltas.iter().rev() {
        acc = d + gl * acc;
        total += match mode {
            ScoringMode::AbsGae => acc.abs(),
            ScoringMode::PositiveValueLoss => acc.max(0.0),
        };
    }
    total / deltas.len() as f64
}

/// Rank-prioritised scoring distribution: `P_i ∝ (1/rank_i)^(1/beta)` with
/// rank 1 for the largest score and ties broken by insertion order.
pub fn scoring_distribution(scores: &[f64], beta: f64) -> Vec<f64> {
    assert!(!scores.is_empty());
    assert!(beta > 0.0);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut weights = vec![0.0; scores.len()];
    for (rank0, &i) in order.iter().enumerate() {
        weights[i] = (1.0 / (rank0 + 1) as f64).powf(1.0 / beta);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

/// Staleness distribution `P_i = (c - C_i) / sum_j (c - C_j)`; degrades to
/// uniform when every entry was sampled at the current episode.
pub fn staleness_distribution(counters: &[u64], c: u64) -> Vec<f64> {
    assert!(!counters.is_empty());
    assert!(counters.iter().all(|&ci| ci <= c));
    let total: u64 = counters.iter().map(|&ci| c - ci).sum();
    if total == 0 {
        return vec![1.0 / counters.len() as f64; counters.len()];
    }
    counters
        .iter()
        .map(|&ci| (c - ci) as f64 / total as f64)
        .collect()
}

/// How a training task was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrigin {
    Sampled,
    Replayed,
    Mutated,
}

/// A task handed to the trainer, with enough identity to post its score back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTicket {
    pub level: EnvLevel,
    pub origin: TaskOrigin,
    /// Buffer entry the task refers to, when it was replayed unchanged.
    pub entry_uid: Option<u64>,
    /// Parent entry a mutated task was derived from.
    pub parent_uid: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBufferEntry {
    pub uid: u64,
    pub level: EnvLevel,
    pub score: f64,
    pub last_sampled_at: u64,
}

/// Bounded replay buffer; single-writer, serialised through the coordinator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelBuffer {
    entries: Vec<LevelBufferEntry>,
    next_uid: u64,
}

impl LevelBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LevelBufferEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn slot_of(&self, uid: u64) -> Option<usize> {
        self.entries.iter().position(|e| e.uid == uid)
    }

    /// Replay distribution `(1 - rho) P_S + rho P_C`.
    pub fn replay_distribution(&self, cfg: &CurriculumConfig, c: u64) -> Vec<f64> {
        let scores: Vec<f64> = self.entries.iter().map(|e| e.score).collect();
        let counters: Vec<u64> = self.entries.iter().map(|e| e.last_sampled_at).collect();
        let ps = scoring_distribution(&scores, cfg.beta);
        let pc = staleness_distribution(&counters, c);
        ps.iter()
            .zip(&pc)
            .map(|(s, st)| (1.0 - cfg.rho) * s + cfg.rho * st)
            .collect()
    }

    /// Record a finished rollout: update the replayed entry or insert the
    /// task as a new entry, evicting a minimum-score entry past capacity.
    pub fn update_after_rollout(
        &mut self,
        ticket: &TaskTicket,
        score: f64,
        c: u64,
        cfg: &CurriculumConfig,
    ) {
        debug_assert!(score >= 0.0);
        if let Some(slot) = ticket.entry_uid.and_then(|uid| self.slot_of(uid)) {
            self.entries[slot].score = score;
            self.entries[slot].last_sampled_at = c;
            return;
        }
        let uid = self.next_uid;
        self.next_uid += 1;
        self.entries.push(LevelBufferEntry {
            uid,
            level: ticket.level.clone(),
            score,
            last_sampled_at: c,
        });
        while self.entries.len() > cfg.buffer_size {
            // Evict the minimum score; among ties drop the newest entry so
            // established levels survive.
            let evict = self
                .entries
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.score
                        .partial_cmp(&b.score)
                        .unwrap()
                        .then(b.uid.cmp(&a.uid))
                })
                .map(|(i, _)| i)
                .unwrap();
            self.entries.remove(evict);
        }
    }

    /// Write one structured text line per entry.
    pub fn write_snapshot(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).map_err(|err| {
                Error::Checkpoint(format!("buffer snapshot serialisation: {err}"))
            })?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draw the next training task: fresh uniform sample with probability
/// `1 - replay_rate` (or always while the buffer is empty), otherwise a
/// replay draw that is mutated with probability `edit_rate`.
pub fn next_task(
    buffer: &LevelBuffer,
    cfg: &CurriculumConfig,
    train_levels: &[EnvLevel],
    model: &ModalModel,
    c: u64,
    seed: u64,
) -> Result<TaskTicket> {
    if train_levels.is_empty() {
        return Err(Error::InvalidArgument("empty training level set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replay = !buffer.is_empty() && rng.random::<f64>() < cfg.replay_rate;
    if !replay {
        let level = train_levels[rng.random_range(0..train_levels.len())].clone();
        return Ok(TaskTicket {
            level,
            origin: TaskOrigin::Sampled,
            entry_uid: None,
            parent_uid: None,
        });
    }
    let dist = buffer.replay_distribution(cfg, c);
    let slot = sample_categorical(&dist, &mut rng);
    let entry = &buffer.entries()[slot];
    if rng.random::<f64>() < cfg.edit_rate {
        let child_seed = rng.random::<u64>();
        let child = mutate_level(&entry.level, cfg.n_edits, child_seed, model)?;
        Ok(TaskTicket {
            level: child,
            origin: TaskOrigin::Mutated,
            entry_uid: None,
            parent_uid: Some(entry.uid),
        })
    } else {
        Ok(TaskTicket {
            level: entry.level.clone(),
            origin: TaskOrigin::Replayed,
            entry_uid: Some(entry.uid),
            parent_uid: None,
        })
    }
}
