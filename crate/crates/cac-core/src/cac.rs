//! Contraction actor-critic training: metric-shaped tracking reward, PPO
//! with generalized advantage estimation, clipping and KL early stop, and
//! the freeze-and-learn schedule that updates the metric generator every
//! n-th policy iteration. A metric-free PPO baseline shares the same loop
//! with the reward metric pinned to identity.

use crate::ccm::{self, CcmConfig, CmgBatchItem, CmgNet};
use crate::envs::{self, EnvSpec, ReferenceTrajectory};
use crate::net::{AdamState, CheckpointHeader, DiagGaussian, Mlp, STD_MAX, STD_MIN};
use crate::numerics::{Mat, Vector};
use crate::report;
use crate::rng::Rng;
use crate::sysid::DynModel;
use crate::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

pub const ACTOR_WIDTHS: [usize; 2] = [64, 64];
pub const CRITIC_WIDTHS: [usize; 2] = [128, 128];

// ---------------------------------------------------------------------------
// Actor-critic
// ---------------------------------------------------------------------------

/// Gaussian policy over control corrections plus a value head, both fed the
/// observation `[x, x_d - x, u_d, k/L]`.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub log_std: Vector,
    pub critic: Mlp,
    pub n: usize,
    pub m: usize,
}

/// Per-coordinate state scale used to condition network inputs: half the
/// state-box width (floored away from zero for safety).
pub fn state_scale(spec: &EnvSpec, i: usize) -> f64 {
    (0.5 * (spec.x_max[i] - spec.x_min[i])).max(1e-6)
}

fn control_scale(spec: &EnvSpec, j: usize) -> f64 {
    (0.5 * (spec.u_max[j] - spec.u_min[j])).max(1e-6)
}

/// Per-coordinate scale for the tracking-error block: half the width of the
/// initial-error set, so a typical starting error reads as O(1).
pub fn error_scale(spec: &EnvSpec, i: usize) -> f64 {
    (0.5 * (spec.xe_max[i] - spec.xe_min[i])).max(1e-6)
}

/// Observation `[x, x_d(k) - x, u_d(k), k/L]`, each block divided by its
/// box half-width (the error block by the initial-error half-width) so
/// every input is O(1) for the tanh networks. The error block measures the
/// angular coordinate along the shorter arc. At the horizon boundary the
/// reference control index is clamped (only the bootstrap value ever looks
/// there).
pub fn observation(spec: &EnvSpec, reference: &ReferenceTrajectory, k: usize, x: &Vector) -> Vector {
    let xd = &reference.states[k];
    let ud = &reference.controls[k.min(reference.horizon - 1)];
    let diff = spec.state_diff(xd, x);
    let mut obs = Vector::zeros(2 * spec.n + spec.m + 1);
    for i in 0..spec.n {
        obs[i] = x[i] / state_scale(spec, i);
        obs[spec.n + i] = diff[i] / error_scale(spec, i);
    }
    for j in 0..spec.m {
        obs[2 * spec.n + j] = ud[j] / control_scale(spec, j);
    }
    obs[2 * spec.n + spec.m] = k as f64 / reference.horizon as f64;
    obs
}

impl ActorCritic {
    /// Initial correction std is half the control half-range per channel.
    pub fn new(spec: &EnvSpec, rng: &mut Rng) -> Self {
        let obs_dim = 2 * spec.n + spec.m + 1;
        let actor = Mlp::new(
            &[obs_dim, ACTOR_WIDTHS[0], ACTOR_WIDTHS[1], spec.m],
            1e-2,
            &mut rng.split("actor"),
        );
        let critic = Mlp::new(
            &[obs_dim, CRITIC_WIDTHS[0], CRITIC_WIDTHS[1], 1],
            1.0,
            &mut rng.split("critic"),
        );
        let log_std = Vector::from_fn(spec.m, |j, _| {
            if let Ok(v) = std::env::var("FREEZE_STD") {
                return v.parse().unwrap();
            }
            (0.25 * (spec.u_max[j] - spec.u_min[j])).max(STD_MIN).ln()
        });
        ActorCritic {
            actor,
            log_std,
            critic,
            n: spec.n,
            m: spec.m,
        }
    }

    pub fn policy(&self, obs: &Vector) -> Result<DiagGaussian> {
        Ok(DiagGaussian::new(
            self.actor.forward(obs)?,
            self.log_std.clone(),
        ))
    }

    pub fn value(&self, obs: &Vector) -> Result<f64> {
        Ok(self.critic.forward(obs)?[0])
    }

    pub fn entropy(&self) -> f64 {
        DiagGaussian::new(Vector::zeros(self.m), self.log_std.clone()).entropy()
    }

    /// Feedback gain of the mean policy. x enters the observation twice
    /// (directly and through x_d - x), each occurrence with its own input
    /// scale, so `K[:, c] = J[:, c] / s_c - J[:, n + c] / e_c`.
    pub fn feedback_gain(&self, spec: &EnvSpec, obs: &Vector) -> Result<Mat> {
        let j = self.actor.input_jacobian(obs)?;
        Ok(Mat::from_fn(self.m, self.n, |r, c| {
            j[(r, c)] / state_scale(spec, c) - j[(r, self.n + c)] / error_scale(spec, c)
        }))
    }

    pub fn save(&self, dir: &Path, seed: u64, step: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::net::save_checkpoint(
            &dir.join("actor.ckpt"),
            &CheckpointHeader {
                widths: self.actor.widths.clone(),
                role: "actor".into(),
                seed,
                step,
                extra: self.log_std.len(),
            },
            &self.actor,
            Some(&self.log_std),
        )?;
        crate::net::save_checkpoint(
            &dir.join("critic.ckpt"),
            &CheckpointHeader {
                widths: self.critic.widths.clone(),
                role: "critic".into(),
                seed,
                step,
                extra: 0,
            },
            &self.critic,
            None,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (ah, actor, extra) = crate::net::load_checkpoint(&dir.join("actor.ckpt"))?;
        let (_, critic, _) = crate::net::load_checkpoint(&dir.join("critic.ckpt"))?;
        let m = *ah.widths.last().unwrap();
        let obs_dim = ah.widths[0];
        let n = (obs_dim - m - 1) / 2;
        let log_std =
            extra.ok_or_else(|| CoreError::Checkpoint("actor checkpoint missing log-std".into()))?;
        Ok(ActorCritic {
            actor,
            log_std,
            critic,
            n,
            m,
        })
    }
}

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct RewardTerms {
    /// `1 / (1 + dx' M dx)`, always in (0, 1].
    pub metric_term: f64,
    pub total: f64,
}

/// Tracking reward under metric M plus the policy-entropy bonus, from a
/// precomputed displacement.
pub fn reward_from_diff(m: &Mat, dx: &Vector, beta_pi: f64, entropy: f64) -> RewardTerms {
    // TEMP experiment hook: REWARD_W="w0,w1,..." replaces M with diag(w).
    static REWARD_W: std::sync::OnceLock<Option<Vec<f64>>> = std::sync::OnceLock::new();
    let hack = REWARD_W.get_or_init(|| {
        std::env::var("REWARD_W")
            .ok()
            .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
    });
    let energy = if let Some(w) = hack {
        (0..dx.len()).map(|i| w[i] * dx[i] * dx[i]).sum::<f64>()
    } else {
        dx.dot(&(m * dx))
    };
    let metric_term = 1.0 / (1.0 + energy);
    RewardTerms {
        metric_term,
        total: metric_term + beta_pi * entropy,
    }
}

/// Tracking reward with the plain Euclidean displacement `x - x_d`. The
/// training loop instead uses [`EnvSpec::state_diff`], which measures the
/// wrapped angular coordinate along the shorter arc.
pub fn reward(m: &Mat, x: &Vector, x_d: &Vector, beta_pi: f64, entropy: f64) -> RewardTerms {
    reward_from_diff(m, &(x - x_d), beta_pi, entropy)
}

// ---------------------------------------------------------------------------
// Rollout buffer and GAE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: Vector,
    pub action: Vector,
    pub log_prob: f64,
    pub reward: f64,
    pub metric_term: f64,
    pub value: f64,
    /// Critic value of the successor observation (bootstrap on truncation).
    pub next_value: f64,
    /// True termination (left the state box); bootstraps zero.
    pub done: bool,
    pub truncated: bool,
    pub x: Vector,
    pub u: Vector,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub samples: Vec<Sample>,
}

/// Standard GAE recursion. Termination bootstraps zero, truncation (and a
/// buffer ending mid-episode) bootstraps the stored critic value of the next
/// observation; the eligibility chain is cut at every episode boundary.
pub fn gae_returns(buffer: &RolloutBuffer, gamma: f64, lam: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if buffer.samples.is_empty() {
        return Err(CoreError::Precondition("gae on empty buffer".into()));
    }
    let t = buffer.samples.len();
    let mut advantages = vec![0.0; t];
    let mut returns = vec![0.0; t];
    let mut adv_next = 0.0;
    for k in (0..t).rev() {
        let s = &buffer.samples[k];
        let bootstrap = if s.done { 0.0 } else { s.next_value };
        let delta = s.reward + gamma * bootstrap - s.value;
        let carry = if s.done || s.truncated { 0.0 } else { adv_next };
        adv_next = delta + gamma * lam * carry;
        advantages[k] = adv_next;
        returns[k] = adv_next + s.value;
    }
    Ok((advantages, returns))
}

/// Zero-mean unit-std normalization (std guard for degenerate batches).
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub buffer_size: usize,
    pub minibatch: usize,
    pub k_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub target_kl: f64,
    pub beta_pi: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub cmg_lr: f64,
    /// Policy iterations per CMG update; 0 disables CMG updates entirely.
    pub cmg_every: usize,
    /// Pin the reward metric to identity (the PPO baseline does this).
    pub identity_metric: bool,
    pub lambda: f64,
    pub beta_m: f64,
    pub n_z: usize,
    pub w_lb: f64,
    pub w_ub: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 300_000,
            buffer_size: 1024,
            minibatch: 32,
            k_epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            target_kl: 0.03,
            beta_pi: 1e-2,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            cmg_lr: 1e-3,
            cmg_every: 10,
            identity_metric: false,
            lambda: ccm::DEFAULT_LAMBDA,
            beta_m: ccm::DEFAULT_BETA_M,
            n_z: ccm::DEFAULT_N_Z,
            w_lb: ccm::DEFAULT_W_LB,
            w_ub: ccm::DEFAULT_W_UB,
            eval_every: 20,
            eval_episodes: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CoreError::Precondition("gamma must lie in (0, 1)".into()));
        }
        if self.minibatch == 0 || self.minibatch > self.buffer_size {
            return Err(CoreError::Precondition(
                "minibatch must be in 1..=buffer_size".into(),
            ));
        }
        if self.k_epochs == 0 {
            return Err(CoreError::Precondition("k_epochs must be >= 1".into()));
        }
        if !(self.w_lb > 0.0 && self.w_lb < self.w_ub) {
            return Err(CoreError::Precondition(
                "metric bounds need 0 < w_lb < w_ub".into(),
            ));
        }
        Ok(())
    }

    fn ccm(&self) -> CcmConfig {
        CcmConfig {
            lambda: self.lambda,
            beta_m: self.beta_m,
            n_z: self.n_z,
        }
    }
}

// ---------------------------------------------------------------------------
// PPO update
// ---------------------------------------------------------------------------

pub struct PpoOptimizers {
    pub actor: AdamState,
    pub log_std: AdamState,
    pub critic: AdamState,
}

impl PpoOptimizers {
    pub fn new(ac: &ActorCritic, cfg: &TrainConfig) -> Self {
        PpoOptimizers {
            actor: AdamState::new(ac.actor.param_count(), cfg.actor_lr),
            log_std: AdamState::new(ac.log_std.len(), cfg.actor_lr),
            critic: AdamState::new(ac.critic.param_count(), cfg.critic_lr),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub kl: f64,
    pub epochs: usize,
}

fn gaussian_log_prob_col(mu: &Mat, col: usize, action: &Vector, std: &Vector) -> f64 {
    let mut lp = 0.0;
    for j in 0..action.len() {
        let z = (action[j] - mu[(j, col)]) / std[j];
        lp += -0.5 * z * z - std[j].ln() - 0.5 * crate::net::LN_2PI;
    }
    lp
}

/// Mean approximate KL `E[logp_old - logp_new]` over the whole buffer.
fn approx_kl(ac: &ActorCritic, buffer: &RolloutBuffer) -> Result<f64> {
    let cols: Vec<Vector> = buffer.samples.iter().map(|s| s.obs.clone()).collect();
    let mu = ac.actor.forward_batch(&Mat::from_columns(&cols))?;
    let std = DiagGaussian::new(Vector::zeros(ac.m), ac.log_std.clone()).std();
    let mut kl = 0.0;
    for (i, s) in buffer.samples.iter().enumerate() {
        kl += s.log_prob - gaussian_log_prob_col(&mu, i, &s.action, &std);
    }
    Ok(kl / buffer.samples.len() as f64)
}

/// Clipped-surrogate PPO update with entropy bonus and KL early stop.
/// Runs up to `k_epochs` shuffled minibatch passes; stops as soon as the
/// post-epoch approximate KL exceeds `target_kl`.
pub fn ppo_update(
    ac: &mut ActorCritic,
    opts: &mut PpoOptimizers,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    returns: &[f64],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<PpoStats> {
    let n_samples = buffer.samples.len();
    let mut stats = PpoStats {
        actor_loss: 0.0,
        critic_loss: 0.0,
        kl: 0.0,
        epochs: 0,
    };
    for epoch in 0..cfg.k_epochs {
        let order = rng.permutation(n_samples);
        let mut epoch_actor = 0.0;
        let mut epoch_critic = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.minibatch) {
            let (al, cl) = ppo_minibatch(ac, opts, buffer, advantages, returns, cfg, chunk)?;
            epoch_actor += al;
            epoch_critic += cl;
            n_batches += 1;
        }
        stats.actor_loss = epoch_actor / n_batches as f64;
        stats.critic_loss = epoch_critic / n_batches as f64;
        stats.epochs = epoch + 1;
        stats.kl = approx_kl(ac, buffer)?;
        if stats.kl > cfg.target_kl {
            break;
        }
    }
    Ok(stats)
}

fn ppo_minibatch(
    ac: &mut ActorCritic,
    opts: &mut PpoOptimizers,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    returns: &[f64],
    cfg: &TrainConfig,
    idx: &[usize],
) -> Result<(f64, f64)> {
    let mb = idx.len() as f64;
    // re-center advantages within the minibatch (they are already
    // normalized per update, which the re-centering preserves in
    // expectation); this follows common clipped-PPO practice
    let mb_mean = idx.iter().map(|&i| advantages[i]).sum::<f64>() / mb;
    let mb_var = idx
        .iter()
        .map(|&i| (advantages[i] - mb_mean).powi(2))
        .sum::<f64>()
        / mb;
    let mb_std = mb_var.sqrt().max(1e-8);
    let adv_of = |i: usize| (advantages[i] - mb_mean) / mb_std;
    let cols: Vec<Vector> = idx.iter().map(|&i| buffer.samples[i].obs.clone()).collect();
    let x = Mat::from_columns(&cols);
    let mu = ac.actor.forward_batch(&x)?;
    let std = DiagGaussian::new(Vector::zeros(ac.m), ac.log_std.clone()).std();
    let entropy = ac.entropy();

    let mut actor_loss = 0.0;
    let mut upstream = Mat::zeros(ac.m, idx.len());
    let mut g_log_std = Vector::zeros(ac.m);
    for (c, &i) in idx.iter().enumerate() {
        let s = &buffer.samples[i];
        let adv = adv_of(i);
        let logp_new = gaussian_log_prob_col(&mu, c, &s.action, &std);
        let ratio = (logp_new - s.log_prob).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        actor_loss -= (ratio * adv).min(clipped * adv) / mb;
        // the surrogate only has gradient where the unclipped branch is the
        // minimizer
        let active = !((adv >= 0.0 && ratio > 1.0 + cfg.clip)
            || (adv < 0.0 && ratio < 1.0 - cfg.clip));
        if active {
            let g = -adv * ratio / mb;
            for j in 0..ac.m {
                let d = s.action[j] - mu[(j, c)];
                upstream[(j, c)] = g * d / (std[j] * std[j]);
                g_log_std[j] += g * (d * d / (std[j] * std[j]) - 1.0);
            }
        }
    }
    actor_loss -= cfg.beta_pi * entropy;
    for j in 0..ac.m {
        let sd = self_std(ac.log_std[j]);
        if sd > STD_MIN && sd < STD_MAX {
            g_log_std[j] -= cfg.beta_pi;
        }
    }

    // critic: MSE to returns
    let v = ac.critic.forward_batch(&x)?;
    let mut critic_loss = 0.0;
    let mut v_up = Mat::zeros(1, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        let err = v[(0, c)] - returns[i];
        critic_loss += err * err / mb;
        v_up[(0, c)] = 2.0 * err / mb;
    }
    if !actor_loss.is_finite() || !critic_loss.is_finite() {
        return Err(CoreError::Diverged(format!(
            "ppo losses non-finite (actor {actor_loss}, critic {critic_loss})"
        )));
    }

    let a_grads = ac.actor.backward_batch(&x, &upstream)?;
    let mut a_flat = a_grads.flatten();
    clip_grad_norm(&mut [&mut a_flat, &mut g_log_std], MAX_GRAD_NORM);
    let mut flat = ac.actor.flatten();
    opts.actor.step(&mut flat, &a_flat);
    ac.actor.set_from_flat(&flat)?;
    if std::env::var("FREEZE_STD").is_err() {
        opts.log_std.step(&mut ac.log_std, &g_log_std);
    }

    let c_grads = ac.critic.backward_batch(&x, &v_up)?;
    let mut c_flat = c_grads.flatten();
    clip_grad_norm(&mut [&mut c_flat], MAX_GRAD_NORM);
    let mut flat = ac.critic.flatten();
    opts.critic.step(&mut flat, &c_flat);
    ac.critic.set_from_flat(&flat)?;

    Ok((actor_loss, critic_loss))
}

/// Maximum global gradient norm for the actor (with its log-std) and the
/// critic, as in standard clipped-PPO practice.
pub const MAX_GRAD_NORM: f64 = 0.5;

/// The metric-generator update takes `CMG_CHUNKS` gradient step(s) on
/// subsample(s) of up to `CMG_CHUNK_SIZE` buffer samples.
pub const CMG_CHUNKS: usize = 1;
pub const CMG_CHUNK_SIZE: usize = 1024;

/// Scale a set of gradient blocks so their joint Euclidean norm is at most
/// `max_norm`.
fn clip_grad_norm(blocks: &mut [&mut Vector], max_norm: f64) {
    let norm = blocks
        .iter()
        .map(|b| b.norm_squared())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for b in blocks.iter_mut() {
            **b *= s;
        }
    }
}

fn self_std(log_std: f64) -> f64 {
    log_std.exp().clamp(STD_MIN, STD_MAX)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct IterLog {
    pub iter: usize,
    pub steps: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub cmg_loss: Option<f64>,
    pub mean_reward: f64,
    pub mean_metric_term: f64,
    pub kl: f64,
    pub epochs: usize,
    pub entropy: f64,
    pub eval_mauc: Option<f64>,
    /// FNV-1a digest over the raw CMG parameter bytes after this iteration,
    /// making the freeze-and-learn schedule auditable from the log.
    pub cmg_digest: Option<String>,
}

fn cmg_digest(c: &CmgNet) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |v: f64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for v in c.net.flatten().iter() {
        eat(*v);
    }
    for v in c.log_std.iter() {
        eat(*v);
    }
    format!("{h:016x}")
}

pub struct TrainResult {
    pub ac: ActorCritic,
    pub best: ActorCritic,
    pub best_mauc: f64,
    pub cmg: Option<CmgNet>,
    pub logs: Vec<IterLog>,
    pub steps: usize,
}

struct Episode {
    reference: ReferenceTrajectory,
    x: Vector,
    k: usize,
    metric: Mat,
}

fn start_episode(
    spec: &EnvSpec,
    cmg: Option<&CmgNet>,
    base: &Rng,
    index: u64,
) -> Result<Episode> {
    let mut rng = base.split_indexed("episode", index);
    let reference = envs::generate_reference(
        spec,
        &mut rng,
        envs::DEFAULT_FREQS.len(),
        &envs::DEFAULT_FREQS,
        spec.horizon,
    )?;
    let x = envs::reset(spec, &reference, &mut rng);
    // one metric draw per episode, held fixed; identity draws nothing
    let metric = match cmg {
        Some(c) => c.sample_metric(&x, &mut rng)?.m,
        None => Mat::identity(spec.n, spec.n),
    };
    Ok(Episode {
        reference,
        x,
        k: 0,
        metric,
    })
}

/// Shared loop behind [`train_cac`] and [`train_ppo_baseline`]: collect a
/// buffer under the current policy, update the CMG on every n-th iteration
/// (when one is attached), then run the PPO update. Periodic deterministic
/// evaluations track the best policy by lowest mean MAUC.
fn train_loop(
    spec: &EnvSpec,
    model: Option<&DynModel>,
    mut cmg: Option<CmgNet>,
    cfg: &TrainConfig,
    rng: &mut Rng,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let mut ac = ActorCritic::new(spec, &mut rng.split("init"));
    let mut opts = PpoOptimizers::new(&ac, cfg);
    let mut cmg_opts = cmg.as_ref().map(|c| {
        (
            AdamState::new(c.net.param_count(), cfg.cmg_lr),
            AdamState::new(c.log_std.len(), cfg.cmg_lr),
        )
    });

    let episode_base = rng.split("episodes");
    let mut rng_act = rng.split("actions");
    let mut rng_ppo = rng.split("ppo");
    let mut rng_cmg = rng.split("cmg-probes");
    let eval_base = rng.split("eval");

    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::fs::File::create(dir.join("train_log.jsonl"))?)
        }
        None => None,
    };

    let mut episode_idx: u64 = 0;
    let mut episode = start_episode(spec, cmg.as_ref(), &episode_base, episode_idx)?;
    let mut steps = 0usize;
    let mut iter = 0usize;
    let mut logs = Vec::new();
    let mut best_mauc = f64::MAX;
    let mut best = ac.clone();

    let mut eval_round: u64 = 0;
    while steps < cfg.total_steps {
        iter += 1;
        let entropy = ac.entropy();

        // linear learning-rate annealing over the step budget
        let frac = if std::env::var("ANNEAL").map(|v| v == "0").unwrap_or(false) {
            1.0
        } else {
            1.0 - steps as f64 / cfg.total_steps as f64
        };
        opts.actor.lr = cfg.actor_lr * frac;
        opts.log_std.lr = cfg.actor_lr * frac;
        opts.critic.lr = cfg.critic_lr * frac;

        // --- collect one buffer ---
        let mut buffer = RolloutBuffer::default();
        while buffer.samples.len() < cfg.buffer_size {
            let obs = observation(spec, &episode.reference, episode.k, &episode.x);
            let dist = ac.policy(&obs)?;
            let (action, _) = dist.sample(&mut rng_act);
            let log_prob = dist.log_prob(&action);
            let value = ac.value(&obs)?;
            let tr = envs::step(spec, &episode.reference, episode.k, &episode.x, &action)?;
            let terms = reward_from_diff(
                &episode.metric,
                &spec.state_diff(&tr.x_next, &episode.reference.states[episode.k + 1]),
                cfg.beta_pi,
                entropy,
            );
            let terminated = tr.done && !tr.truncated;
            let next_value = if terminated {
                0.0
            } else {
                ac.value(&observation(
                    spec,
                    &episode.reference,
                    episode.k + 1,
                    &tr.x_next,
                ))?
            };
            buffer.samples.push(Sample {
                obs,
                action,
                log_prob,
                reward: terms.total,
                metric_term: terms.metric_term,
                value,
                next_value,
                done: terminated,
                truncated: tr.truncated,
                x: tr.x,
                u: tr.applied,
            });
            steps += 1;
            if tr.done {
                episode_idx += 1;
                episode = start_episode(spec, cmg.as_ref(), &episode_base, episode_idx)?;
            } else {
                episode.k += 1;
                episode.x = tr.x_next;
            }
        }

        // --- CMG update on every n-th iteration, before the policy update ---
        let mut cmg_loss_val = None;
        if let (Some(c), Some((opt_net, opt_std))) = (cmg.as_mut(), cmg_opts.as_mut()) {
            if cfg.cmg_every > 0 && iter % cfg.cmg_every == 0 {
                let model = model.ok_or_else(|| {
                    CoreError::Precondition("CMG updates need a dynamics model".into())
                })?;
                // subsample the on-policy buffer into CMG_CHUNKS minibatches
                // of up to CMG_CHUNK_SIZE and take one gradient step on each
                let order = rng_cmg.permutation(buffer.samples.len());
                let mut loss_sum = 0.0;
                let mut n_chunks = 0;
                for chunk in order.chunks(CMG_CHUNK_SIZE).take(CMG_CHUNKS) {
                    let batch: Vec<CmgBatchItem> = chunk
                        .iter()
                        .map(|&i| {
                            let s = &buffer.samples[i];
                            Ok(CmgBatchItem {
                                x: s.x.clone(),
                                u: s.u.clone(),
                                reward: s.metric_term,
                                k_gain: ac.feedback_gain(spec, &s.obs)?,
                            })
                        })
                        .collect::<Result<_>>()?;
                    let (loss, grads) = ccm::cmg_loss(model, c, &batch, &cfg.ccm(), &mut rng_cmg)?;
                    let mut flat = c.net.flatten();
                    opt_net.step(&mut flat, &grads.net.flatten());
                    c.net.set_from_flat(&flat)?;
                    opt_std.step(&mut c.log_std, &grads.log_std);
                    loss_sum += loss;
                    n_chunks += 1;
                }
                cmg_loss_val = Some(loss_sum / n_chunks as f64);
            }
        }

        // --- PPO update ---
        let (advantages, returns) = gae_returns(&buffer, cfg.gamma, cfg.gae_lambda)?;
        let mut advantages = advantages;
        normalize_advantages(&mut advantages);
        let stats = ppo_update(&mut ac, &mut opts, &buffer, &advantages, &returns, cfg, &mut rng_ppo)?;

        // --- periodic evaluation ---
        let mut eval_mauc = None;
        if cfg.eval_every > 0
            && (iter % cfg.eval_every == 0 || steps >= cfg.total_steps)
            && cfg.eval_episodes > 0
        {
            let outcome = evaluate_policy(
                spec,
                &ac,
                cfg.eval_episodes,
                &eval_base.split_indexed("round", eval_round),
            )?;
            eval_round += 1;
            eval_mauc = Some(outcome.mean_mauc);
            if outcome.mean_mauc < best_mauc {
                best_mauc = outcome.mean_mauc;
                best = ac.clone();
            }
        }

        let mean_reward =
            buffer.samples.iter().map(|s| s.reward).sum::<f64>() / buffer.samples.len() as f64;
        let mean_metric_term =
            buffer.samples.iter().map(|s| s.metric_term).sum::<f64>() / buffer.samples.len() as f64;
        let entry = IterLog {
            iter,
            steps,
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            cmg_loss: cmg_loss_val,
            mean_reward,
            mean_metric_term,
            kl: stats.kl,
            epochs: stats.epochs,
            entropy,
            eval_mauc,
            cmg_digest: cmg.as_ref().map(cmg_digest),
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        }
        logs.push(entry);
    }

    if best_mauc == f64::MAX {
        best = ac.clone();
    }
    Ok(TrainResult {
        ac,
        best,
        best_mauc,
        cmg,
        logs,
        steps,
    })
}

/// Full contraction actor-critic training (Algorithm: pretrain dynamics,
/// then alternate CMG and policy updates on shared rollouts).
pub fn train_cac(
    spec: &EnvSpec,
    model: &DynModel,
    cfg: &TrainConfig,
    rng: &mut Rng,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    let cmg = if cfg.identity_metric {
        None
    } else {
        let mut c = CmgNet::new(spec.n, &mut rng.split("cmg-init"));
        c.w_lb = cfg.w_lb;
        c.w_ub = cfg.w_ub;
        Some(c)
    };
    train_loop(spec, Some(model), cmg, cfg, rng, out_dir)
}

/// Metric-free PPO baseline: the same loop with the reward metric pinned to
/// identity and no CMG.
pub fn train_ppo_baseline(
    spec: &EnvSpec,
    cfg: &TrainConfig,
    rng: &mut Rng,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    train_loop(spec, None, None, cfg, rng, out_dir)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// Normalized error curves, one per included episode (visited states
    /// only, so a full episode has exactly `horizon` entries).
    pub curves: Vec<Vec<f64>>,
    pub maucs: Vec<f64>,
    pub excluded: usize,
    pub mean_mauc: f64,
}

/// Deterministic (mean-action) rollouts on fresh references.
pub fn evaluate_policy(
    spec: &EnvSpec,
    ac: &ActorCritic,
    episodes: usize,
    rng: &Rng,
) -> Result<EvalOutcome> {
    let mut curves = Vec::new();
    let mut maucs = Vec::new();
    let mut excluded = 0;
    for e in 0..episodes {
        let mut erng = rng.split_indexed("eval-episode", e as u64);
        let reference = envs::generate_reference(
            spec,
            &mut erng,
            envs::DEFAULT_FREQS.len(),
            &envs::DEFAULT_FREQS,
            spec.horizon,
        )?;
        let mut x = envs::reset(spec, &reference, &mut erng);
        let mut states = vec![x.clone()];
        let mut refs = vec![reference.states[0].clone()];
        for k in 0..spec.horizon {
            let obs = observation(spec, &reference, k, &x);
            let action = ac.actor.forward(&obs)?;
            let tr = envs::step(spec, &reference, k, &x, &action)?;
            x = tr.x_next;
            if tr.done && !tr.truncated {
                break;
            }
            if k + 1 < spec.horizon {
                states.push(x.clone());
                refs.push(reference.states[k + 1].clone());
            }
        }
        match report::normalized_curve_with(&states, &refs, |x, xd| spec.state_diff(x, xd)) {
            Some(curve) => {
                maucs.push(report::mauc(&curve, spec.horizon)?);
                curves.push(curve);
            }
            None => excluded += 1,
        }
    }
    if maucs.is_empty() {
        return Err(CoreError::Precondition(
            "all evaluation episodes excluded (zero initial error)".into(),
        ));
    }
    let mean_mauc = maucs.iter().sum::<f64>() / maucs.len() as f64;
    Ok(EvalOutcome {
        curves,
        maucs,
        excluded,
        mean_mauc,
    })
}
