//! Recurrent actor-critic agent: network, PPO optimiser and the
//! curriculum-driven training loop.

mod net;
mod ppo;

pub use net::{GruNet, NetDims, StepCache};
pub use ppo::{
    affine_normaliser, clip_grad_norm, compute_gae, loss_and_grad, ppo_update, prepare_targets,
    Adam, AgentConfig, BatchTargets, LossStats, Trajectory, UpdateStats,
};

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{next_task, score_trajectory, CurriculumConfig, LevelBuffer, TaskOrigin, TaskTicket};
use crate::env::{Action, Direction, EnvLevel, EnvSnapshot, Grid, SensingEnv};
use crate::modal::ModalModel;
use crate::reward::{FimContext, ModeRange};
use crate::{Error, Result};

/// Draw from a categorical distribution.
pub fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
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

/// One structured run-log record per policy update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub mean_episode_return: f64,
    pub mean_episode_score: f64,
    pub episodes_in_update: u64,
    pub buffer_len: usize,
    pub sampled: u64,
    pub replayed: u64,
    pub mutated: u64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: Option<String>,
    pub agent_cfg: AgentConfig,
    pub curriculum_cfg: CurriculumConfig,
    pub seed: u64,
    pub net: GruNet,
    pub opt: Adam,
    pub update_idx: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub buffer: LevelBuffer,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: (u64, u64),
    pub scaler: ReturnScaler,
    pub workers: Vec<WorkerSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSnapshot {
    pub env: EnvSnapshot,
    pub hidden: Vec<f64>,
    pub ticket: TaskTicket,
    pub ep_rewards: Vec<f64>,
    pub ep_values: Vec<f64>,
    pub ret_accum: f64,
    pub ep_raw_return: f64,
}

/// Running standard deviation of the discounted return, used to scale
/// rewards so they share the value head's output scale. Welford update,
/// primed with unit variance so early rewards pass through unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnScaler {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl ReturnScaler {
    pub fn new() -> Self {
        Self {
            count: 1e-4,
            mean: 0.0,
            m2: 1e-4,
        }
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn scale(&self) -> f64 {
        (self.m2 / self.count + 1e-8).sqrt()
    }
}

impl Default for ReturnScaler {
    fn default() -> Self {
        Self::new()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialise: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        ck.net.validate()?;
        Ok(ck)
    }
}

/// Optional artifacts and resume handle for [`train`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where the run log and checkpoints go; in-memory only when absent.
    pub out_dir: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
    /// Recorded into checkpoints for provenance.
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub net: GruNet,
    pub log: Vec<UpdateRecord>,
    pub checkpoint: Checkpoint,
}

struct Worker {
    env: SensingEnv,
    obs: Vec<f64>,
    hidden: Vec<f64>,
    ticket: TaskTicket,
    /// Rewards and value estimates of the episode in progress, for the
    /// curriculum score at episode end.
    ep_rewards: Vec<f64>,
    ep_values: Vec<f64>,
    /// Discounted raw-reward accumulator feeding the return scaler.
    ret_accum: f64,
    /// Unscaled return of the episode in progress, for logging.
    ep_raw_return: f64,
}

/// Shared immutable per-theta reward contexts.
struct CtxCache {
    model: Arc<ModalModel>,
    grid: Arc<Grid>,
    n_sensors: usize,
    map: HashMap<ModeRange, Arc<FimContext>>,
}

impl CtxCache {
    fn ctx_for(&mut self, theta: ModeRange) -> Result<Arc<FimContext>> {
        if let Some(c) = self.map.get(&theta) {
            return Ok(c.clone());
        }
        let ctx = Arc::new(FimContext::new(self.model.clone(), theta, self.n_sensors)?);
        self.map.insert(theta, ctx.clone());
        Ok(ctx)
    }

    fn env_for(&mut self, level: EnvLevel, horizon: usize) -> Result<SensingEnv> {
        let ctx = self.ctx_for(level.theta)?;
        Ok(SensingEnv::new(ctx, self.grid.clone(), level, horizon))
    }
}

/// Curriculum-driven PPO training. Deterministic per `(configs, seed)`;
/// workers run sequentially so the step order is reproducible.
pub fn train(
    model: Arc<ModalModel>,
    train_levels: &[EnvLevel],
    cur_cfg: &CurriculumConfig,
    cfg: &AgentConfig,
    budget: u64,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    cfg.validate()?;
    cur_cfg.validate()?;
    if train_levels.is_empty() {
        return Err(Error::InvalidArgument("no training levels".into()));
    }
    let steps_per_update = (cfg.rollout_len * cfg.n_workers) as u64;
    let total_updates = budget / steps_per_update;
    if total_updates == 0 {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} is below one rollout ({steps_per_update} steps)"
        )));
    }
    let n_sensors = train_levels[0].init_config.len();
    let mut cache = CtxCache {
        model: model.clone(),
        grid: Arc::new(Grid::new(&model)?),
        n_sensors,
        map: HashMap::new(),
    };
    let dims = NetDims {
        obs: model.n_nodes() + train_levels[0].n_levels,
        hidden: cfg.hidden,
        sensors: n_sensors,
        dirs: Direction::ALL.len(),
    };

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }

    // Fresh state or exact resume.
    let (mut net, mut opt, mut rng, mut buffer, mut workers, mut update_idx, mut env_steps, mut c);
    let mut scaler;
    let mut log: Vec<UpdateRecord> = Vec::new();
    if let Some(path) = &opts.resume_from {
        let ck = Checkpoint::load(path)?;
        if ck.seed != seed || ck.agent_cfg != *cfg || ck.curriculum_cfg != *cur_cfg {
            return Err(Error::Checkpoint(
                "checkpoint was produced under a different seed or config".into(),
            ));
        }
        if ck.net.dims != dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint network dims {:?} do not match the model ({dims:?})",
                ck.net.dims
            )));
        }
        net = ck.net;
        opt = ck.opt;
        buffer = ck.buffer;
        update_idx = ck.update_idx;
        env_steps = ck.env_steps;
        c = ck.episodes;
        rng = ChaCha8Rng::from_seed(ck.rng_seed);
        let pos = ((ck.rng_word_pos.0 as u128) << 64) | ck.rng_word_pos.1 as u128;
        rng.set_word_pos(pos);
        scaler = ck.scaler;
        workers = Vec::with_capacity(ck.workers.len());
        for w in ck.workers {
            let ctx = cache.ctx_for(w.env.level.theta)?;
            let env = SensingEnv::restore(ctx, cache.grid.clone(), &w.env)?;
            let obs = env.observe()?.flatten();
            workers.push(Worker {
                env,
                obs,
                hidden: w.hidden,
                ticket: w.ticket,
                ep_rewards: w.ep_rewards,
                ep_values: w.ep_values,
                ret_accum: w.ret_accum,
                ep_raw_return: w.ep_raw_return,
            });
        }
    } else {
        rng = ChaCha8Rng::seed_from_u64(seed);
        net = GruNet::init(dims, rng.random())?;
        opt = Adam::new(net.params.len());
        buffer = LevelBuffer::new();
        update_idx = 0;
        env_steps = 0;
        c = 0;
        scaler = ReturnScaler::new();
        workers = Vec::with_capacity(cfg.n_workers);
        for _ in 0..cfg.n_workers {
            let task_seed = rng.random();
            let ticket = next_task(&buffer, cur_cfg, train_levels, &model, c, task_seed)?;
            let mut env = cache.env_for(ticket.level.clone(), cfg.horizon)?;
            let obs = env.reset()?.flatten();
            workers.push(Worker {
                env,
                obs,
                hidden: vec![0.0; cfg.hidden],
                ticket,
                ep_rewards: Vec::new(),
                ep_values: Vec::new(),
                ret_accum: 0.0,
                ep_raw_return: 0.0,
            });
        }
    }

    let mut log_file = match &opts.out_dir {
        Some(dir) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("train_log.jsonl"))?,
        ),
        None => None,
    };

    while update_idx < total_updates {
        let mut batch: Vec<Trajectory> = Vec::with_capacity(cfg.n_workers);
        let mut ep_returns: Vec<f64> = Vec::new();
        let mut ep_scores: Vec<f64> = Vec::new();
        let mut origins = [0u64; 3];

        for w in workers.iter_mut() {
            let mut traj = Trajectory {
                obs: Vec::with_capacity(cfg.rollout_len),
                h0: w.hidden.clone(),
                actions: Vec::with_capacity(cfg.rollout_len),
                logp: Vec::with_capacity(cfg.rollout_len),
                rewards: Vec::with_capacity(cfg.rollout_len),
                values: Vec::with_capacity(cfg.rollout_len),
                dones: Vec::with_capacity(cfg.rollout_len),
                bootstrap: 0.0,
            };
            for _ in 0..cfg.rollout_len {
                let (ps, pd, value, h) = net.policy_step(&w.obs, &w.hidden)?;
                let sensor = sample_categorical(&ps, &mut rng);
                let dir = sample_categorical(&pd, &mut rng);
                let action = Action {
                    sensor,
                    direction: Direction::from_index(dir).expect("head size is 4"),
                };
                let (next_obs, raw_reward, done) = w.env.step(action)?;
                w.ret_accum = cfg.gamma * w.ret_accum + raw_reward;
                scaler.update(w.ret_accum);
                let reward = if cfg.normalise_returns {
                    raw_reward / scaler.scale()
                } else {
                    raw_reward
                };
                traj.obs.push(w.obs.clone());
                traj.actions.push(action);
                traj.logp.push(ps[sensor].ln() + pd[dir].ln());
                traj.rewards.push(reward);
                traj.values.push(value);
                traj.dones.push(done);
                w.ep_rewards.push(reward);
                w.ep_values.push(value);
                w.ep_raw_return += raw_reward;

                if done {
                    // episode score from its own TD errors (terminal value 0)
                    let t_ep = w.ep_rewards.len();
                    let mut deltas = Vec::with_capacity(t_ep);
                    for t in 0..t_ep {
                        let v_next = if t + 1 < t_ep { w.ep_values[t + 1] } else { 0.0 };
                        deltas.push(w.ep_rewards[t] + cfg.gamma * v_next - w.ep_values[t]);
                    }
                    let score =
                        score_trajectory(&deltas, cfg.gamma, cfg.lambda, cur_cfg.scoring);
                    ep_scores.push(score);
                    ep_returns.push(w.ep_raw_return);
                    buffer.update_after_rollout(&w.ticket, score, c, cur_cfg);
                    c += 1;
                    w.ep_rewards.clear();
                    w.ep_values.clear();
                    w.ret_accum = 0.0;
                    w.ep_raw_return = 0.0;

                    let task_seed = rng.random();
                    w.ticket =
                        next_task(&buffer, cur_cfg, train_levels, &model, c, task_seed)?;
                    origins[match w.ticket.origin {
                        TaskOrigin::Sampled => 0,
                        TaskOrigin::Replayed => 1,
                        TaskOrigin::Mutated => 2,
                    }] += 1;
                    w.env = cache.env_for(w.ticket.level.clone(), cfg.horizon)?;
                    w.obs = w.env.reset()?.flatten();
                    w.hidden = vec![0.0; cfg.hidden];
                } else {
                    w.obs = next_obs.flatten();
                    w.hidden = h;
                }
            }
            traj.bootstrap = if *traj.dones.last().unwrap() {
                0.0
            } else {
                net.policy_step(&w.obs, &w.hidden)?.2
            };
            batch.push(traj);
        }

        let stats = ppo_update(&mut net, &mut opt, &batch, cfg)?;
        update_idx += 1;
        env_steps += steps_per_update;

        let first = stats.epochs.first().copied().unwrap_or_default();
        let last = stats.epochs.last().copied().unwrap_or_default();
        let n_eps = ep_scores.len();
        let record = UpdateRecord {
            update: update_idx,
            env_steps,
            episodes: c,
            loss: first.total,
            policy_loss: first.policy,
            value_loss: first.value,
            entropy: first.entropy,
            clip_fraction: last.clip_fraction,
            approx_kl: last.approx_kl,
            grad_norm: stats.grad_norm_pre_clip,
            mean_episode_return: mean_or_nan(&ep_returns),
            mean_episode_score: mean_or_nan(&ep_scores),
            episodes_in_update: n_eps as u64,
            buffer_len: buffer.len(),
            sampled: origins[0],
            replayed: origins[1],
            mutated: origins[2],
        };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::Checkpoint(format!("run log: {e}")))?;
            writeln!(f, "{line}")?;
        }
        log.push(record);

        let due = cfg.checkpoint_interval > 0 && update_idx % cfg.checkpoint_interval as u64 == 0;
        if due || update_idx == total_updates {
            let ck = make_checkpoint(
                cfg, cur_cfg, seed, &net, &opt, update_idx, env_steps, c, &buffer, &rng,
                &scaler, &workers, opts,
            );
            if let Some(dir) = &opts.out_dir {
                ck.save(&dir.join("checkpoint.json"))?;
            }
            if update_idx == total_updates {
                return Ok(TrainResult {
                    net,
                    log,
                    checkpoint: ck,
                });
            }
        }
    }

    // resume target already reached: re-emit the current state
    let ck = make_checkpoint(
        cfg, cur_cfg, seed, &net, &opt, update_idx, env_steps, c, &buffer, &rng, &scaler,
        &workers, opts,
    );
    Ok(TrainResult {
        net,
        log,
        checkpoint: ck,
    })
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[allow(clippy::too_many_arguments)]
fn make_checkpoint(
    cfg: &AgentConfig,
    cur_cfg: &CurriculumConfig,
    seed: u64,
    net: &GruNet,
    opt: &Adam,
    update_idx: u64,
    env_steps: u64,
    episodes: u64,
    buffer: &LevelBuffer,
    rng: &ChaCha8Rng,
    scaler: &ReturnScaler,
    workers: &[Worker],
    opts: &TrainOptions,
) -> Checkpoint {
    let pos = rng.get_word_pos();
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: opts.config_hash.clone(),
        agent_cfg: *cfg,
        curriculum_cfg: *cur_cfg,
        seed,
        net: net.clone(),
        opt: opt.clone(),
        update_idx,
        env_steps,
        episodes,
        buffer: buffer.clone(),
        rng_seed: rng.get_seed(),
        rng_word_pos: ((pos >> 64) as u64, pos as u64),
        scaler: scaler.clone(),
        workers: workers
            .iter()
            .map(|w| WorkerSnapshot {
                env: w.env.snapshot(),
                hidden: w.hidden.clone(),
                ticket: w.ticket.clone(),
                ep_rewards: w.ep_rewards.clone(),
                ep_values: w.ep_values.clone(),
                ret_accum: w.ret_accum,
                ep_raw_return: w.ep_raw_return,
            })
            .collect(),
    }
}

/// Greedy or stochastic episode playout with a trained policy; returns the
/// final determinant metric and total reward.
pub fn play_episode(
    net: &GruNet,
    env: &mut SensingEnv,
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let mut obs = env.reset()?.flatten();
    let mut hidden = net.zero_hidden();
    let mut total = 0.0;
    loop {
        let (ps, pd, _, h) = net.policy_step(&obs, &hidden)?;
        let (sensor, dir) = if greedy {
            (argmax(&ps), argmax(&pd))
        } else {
            (
                sample_categorical(&ps, rng),
                sample_categorical(&pd, rng),
            )
        };
        let action = Action {
            sensor,
            direction: Direction::from_index(dir).expect("head size is 4"),
        };
        let (next_obs, reward, done) = env.step(action)?;
        total += reward;
        if done {
            return Ok((env.current_det(), total));
        }
        obs = next_obs.flatten();
        hidden = h;
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}
