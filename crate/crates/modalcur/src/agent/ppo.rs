//! Clipped proximal policy optimisation with generalised advantage
//! estimation over recurrent trajectories.

use serde::{Deserialize, Serialize};

use super::net::{log_softmax_at, GruNet};
use crate::env::Action;
use crate::{Error, Result};

/// Training hyperparameters; the defaults are the published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub hidden: usize,
    pub rollout_len: usize,
    pub n_workers: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub value_clipping: bool,
    /// Scale rewards by a running estimate of the discounted-return standard
    /// deviation during training, keeping rewards and value predictions on
    /// one scale.
    pub normalise_returns: bool,
    /// Per-batch advantage standardisation; needed because det-delta rewards
    /// have no intrinsic scale.
    pub normalise_advantages: bool,
    pub horizon: usize,
    /// Updates between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            rollout_len: 256,
            n_workers: 16,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 1,
            lr: 1e-4,
            adam_eps: 1e-5,
            max_grad_norm: 0.5,
            value_coef: 0.5,
            entropy_coef: 0.0,
            value_clipping: true,
            normalise_returns: true,
            normalise_advantages: true,
            horizon: crate::env::DEFAULT_HORIZON,
            checkpoint_interval: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.rollout_len == 0 || self.n_workers == 0 {
            return Err(Error::InvalidConfig(
                "hidden, rollout_len and n_workers must be positive".into(),
            ));
        }
        if self.minibatches != 1 {
            return Err(Error::InvalidConfig(
                "only 1 minibatch per epoch is supported".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0,1]")));
            }
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidConfig("clip must be positive".into()));
        }
        if self.lr < 0.0 || self.adam_eps <= 0.0 || self.max_grad_norm <= 0.0 {
            return Err(Error::InvalidConfig(
                "lr must be >= 0, adam_eps and max_grad_norm positive".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// One worker's rollout segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `rollout_len` flattened observations.
    pub obs: Vec<Vec<f64>>,
    /// Hidden state at segment start (may be mid-episode).
    pub h0: Vec<f64>,
    pub actions: Vec<Action>,
    pub logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// `dones[t]` marks the step after which the episode (and hidden state)
    /// resets.
    pub dones: Vec<bool>,
    /// Value estimate of the post-segment state; ignored when the final
    /// step terminated.
    pub bootstrap: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.obs.len();
        if [
            self.actions.len(),
            self.logp.len(),
            self.rewards.len(),
            self.values.len(),
            self.dones.len(),
        ]
        .iter()
        .any(|&l| l != t)
        {
            return Err(Error::DimensionMismatch(
                "trajectory field lengths disagree".into(),
            ));
        }
        if t == 0 {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        Ok(())
    }
}

/// GAE with episode-boundary resets. `values` are the rollout's estimates
/// and `bootstrap` stands in for `v_{T}`; returns `(advantages, returns)`
/// with `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_max = rewards.len();
    assert_eq!(values.len(), t_max);
    assert_eq!(dones.len(), t_max);
    let mut advantages = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let v_next = if t + 1 < t_max { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * v_next * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        advantages[t] = acc;
    }
    let returns: Vec<f64> = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Mean and guarded standard deviation of a per-batch affine normaliser
/// `x ↦ (x − mean)/std`.
pub fn affine_normaliser(xs: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty());
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-8))
}

/// Adaptive-moment optimiser state (bias correction on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;

impl Adam {
    pub fn new(n_params: usize) -> Adam {
        Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Per-epoch loss diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub mean_ratio: f64,
}

/// Update summary across all epochs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub epochs: Vec<LossStats>,
    pub grad_norm_pre_clip: f64,
}

/// Fixed (parameter-independent) per-batch targets derived from the stored
/// rollouts, so the loss below is a pure function of the parameters.
pub struct BatchTargets {
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    pub old_values: Vec<Vec<f64>>,
}

pub fn prepare_targets(batch: &[Trajectory], cfg: &AgentConfig) -> Result<BatchTargets> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut advantages = Vec::with_capacity(batch.len());
    let mut returns = Vec::with_capacity(batch.len());
    for traj in batch {
        traj.validate()?;
        let (a, r) = compute_gae(
            &traj.rewards,
            &traj.values,
            &traj.dones,
            traj.bootstrap,
            cfg.gamma,
            cfg.lambda,
        );
        advantages.push(a);
        returns.push(r);
    }
    let old_values: Vec<Vec<f64>> = batch.iter().map(|t| t.values.clone()).collect();
    if cfg.normalise_advantages {
        let flat: Vec<f64> = advantages.iter().flatten().copied().collect();
        let (mean, std) = affine_normaliser(&flat);
        for seq in advantages.iter_mut() {
            for x in seq.iter_mut() {
                *x = (*x - mean) / std;
            }
        }
    }
    Ok(BatchTargets {
        advantages,
        returns,
        old_values,
    })
}

/// Full-batch loss and analytic gradient of the clipped-surrogate objective
/// under the current parameters.
pub fn loss_and_grad(
    net: &GruNet,
    batch: &[Trajectory],
    targets: &BatchTargets,
    cfg: &AgentConfig,
) -> Result<(f64, Vec<f64>, LossStats)> {
    let n_steps: usize = batch.iter().map(|t| t.len()).sum();
    let scale = 1.0 / n_steps as f64;
    let mut grad = vec![0.0; net.params.len()];
    let mut stats = LossStats::default();

    for (ti, traj) in batch.iter().enumerate() {
        // forward pass with caches, resetting hidden at episode boundaries
        let mut caches = Vec::with_capacity(traj.len());
        let mut hidden = traj.h0.clone();
        for t in 0..traj.len() {
            let cache = net.forward_step(&traj.obs[t], &hidden)?;
            hidden = if traj.dones[t] {
                net.zero_hidden()
            } else {
                cache.h.clone()
            };
            caches.push(cache);
        }

        // per-step logit/value gradients
        let mut d_sensor: Vec<Vec<f64>> = Vec::with_capacity(traj.len());
        let mut d_dir: Vec<Vec<f64>> = Vec::with_capacity(traj.len());
        let mut d_value: Vec<f64> = Vec::with_capacity(traj.len());
        for t in 0..traj.len() {
            let cache = &caches[t];
            let a = traj.actions[t];
            let adv = targets.advantages[ti][t];
            let ret = targets.returns[ti][t];
            let v_old = targets.old_values[ti][t];

            let lp_new = log_softmax_at(&cache.sensor_logits, a.sensor)
                + log_softmax_at(&cache.dir_logits, a.direction.index());
            let ratio = (lp_new - traj.logp[t]).exp();
            let clamped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
            let surr1 = ratio * adv;
            let surr2 = clamped * adv;
            stats.policy -= surr1.min(surr2) * scale;
            stats.approx_kl += (traj.logp[t] - lp_new) * scale;
            stats.mean_ratio += ratio * scale;
            if (ratio - 1.0).abs() > cfg.clip {
                stats.clip_fraction += scale;
            }
            // gradient flows through the unclipped branch only when it is
            // the active minimum
            let d_lp = if surr1 <= surr2 { -adv * ratio } else { 0.0 } * scale;

            let mut ds: Vec<f64> = cache
                .sensor_probs
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let onehot = if i == a.sensor { 1.0 } else { 0.0 };
                    d_lp * (onehot - p)
                })
                .collect();
            let mut dd: Vec<f64> = cache
                .dir_probs
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let onehot = if i == a.direction.index() { 1.0 } else { 0.0 };
                    d_lp * (onehot - p)
                })
                .collect();

            let ent_s: f64 = cache
                .sensor_probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            let ent_d: f64 = cache
                .dir_probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            stats.entropy += (ent_s + ent_d) * scale;
            if cfg.entropy_coef != 0.0 {
                // dH/dl_i = -p_i (ln p_i + H); loss term is -coef·H
                let c = cfg.entropy_coef * scale;
                for (i, &p) in cache.sensor_probs.iter().enumerate() {
                    if p > 0.0 {
                        ds[i] += c * p * (p.ln() + ent_s);
                    }
                }
                for (i, &p) in cache.dir_probs.iter().enumerate() {
                    if p > 0.0 {
                        dd[i] += c * p * (p.ln() + ent_d);
                    }
                }
            }

            let v = cache.value;
            let (vl, dv) = if cfg.value_clipping {
                let v_cl = v_old + (v - v_old).clamp(-cfg.clip, cfg.clip);
                let l1 = (v - ret) * (v - ret);
                let l2 = (v_cl - ret) * (v_cl - ret);
                if l1 >= l2 {
                    (l1, 2.0 * (v - ret))
                } else {
                    let inside = (v - v_old).abs() < cfg.clip;
                    (l2, if inside { 2.0 * (v_cl - ret) } else { 0.0 })
                }
            } else {
                ((v - ret) * (v - ret), 2.0 * (v - ret))
            };
            stats.value += vl * scale;
            d_value.push(cfg.value_coef * dv * scale);
            d_sensor.push(ds);
            d_dir.push(dd);
        }

        // backward pass through time
        let mut dh_next = vec![0.0; net.dims.hidden];
        for t in (0..traj.len()).rev() {
            let carried = if traj.dones[t] {
                vec![0.0; net.dims.hidden]
            } else {
                dh_next
            };
            dh_next = net.backward_step(
                &traj.obs[t],
                &caches[t],
                &d_sensor[t],
                &d_dir[t],
                d_value[t],
                &carried,
                &mut grad,
            );
        }
    }

    stats.total =
        stats.policy + cfg.value_coef * stats.value - cfg.entropy_coef * stats.entropy;
    Ok((stats.total, grad, stats))
}

/// Scale `grad` so its global L2 norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One PPO update: `epochs` full-batch gradient steps on the clipped
/// objective.
pub fn ppo_update(
    net: &mut GruNet,
    opt: &mut Adam,
    batch: &[Trajectory],
    cfg: &AgentConfig,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let targets = prepare_targets(batch, cfg)?;
    let mut out = UpdateStats::default();
    for epoch in 0..cfg.epochs {
        let (total, mut grad, stats) = loss_and_grad(net, batch, &targets, cfg)?;
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(epoch));
        }
        let norm = clip_grad_norm(&mut grad, cfg.max_grad_norm);
        if epoch == 0 {
            out.grad_norm_pre_clip = norm;
        }
        opt.step(&mut net.params, &grad, cfg.lr, cfg.adam_eps);
        out.epochs.push(stats);
    }
    Ok(out)
}
