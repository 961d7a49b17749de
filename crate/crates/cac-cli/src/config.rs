//! Run configuration: a single JSON file with per-stage sections. Unknown
//! keys are rejected and every field has a documented default (see
//! `assets/config.schema.json`).

use cac_core::cac::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub dt: f64,
    pub horizon: usize,
    pub out: String,
    pub dynamics: DynamicsConfig,
    pub cmg: CmgConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "car".into(),
            seed: 0,
            dt: cac_core::envs::DEFAULT_DT,
            horizon: cac_core::envs::DEFAULT_HORIZON,
            out: "runs/default".into(),
            dynamics: DynamicsConfig::default(),
            cmg: CmgConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub hidden: Vec<usize>,
    pub episodes: usize,
    pub noise_std: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            hidden: cac_core::sysid::DYN_WIDTHS.to_vec(),
            episodes: 200,
            noise_std: 0.1,
            batch: 1024,
            epochs: 100,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CmgConfig {
    pub lambda: f64,
    pub w_lb: f64,
    pub w_ub: f64,
    pub beta_m: f64,
    pub n_z: usize,
    /// Policy iterations per CMG update; 0 disables CMG updates.
    pub n: usize,
}

impl Default for CmgConfig {
    fn default() -> Self {
        CmgConfig {
            lambda: cac_core::ccm::DEFAULT_LAMBDA,
            w_lb: cac_core::ccm::DEFAULT_W_LB,
            w_ub: cac_core::ccm::DEFAULT_W_UB,
            beta_m: cac_core::ccm::DEFAULT_BETA_M,
            n_z: cac_core::ccm::DEFAULT_N_Z,
            n: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub k_epochs: usize,
    pub target_kl: f64,
    pub beta_pi: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub cmg_lr: f64,
    pub total_steps: usize,
    pub buffer_size: usize,
    pub minibatch: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        let d = TrainConfig::default();
        PpoConfig {
            gamma: d.gamma,
            gae_lambda: d.gae_lambda,
            clip: d.clip,
            k_epochs: d.k_epochs,
            target_kl: d.target_kl,
            beta_pi: d.beta_pi,
            actor_lr: d.actor_lr,
            critic_lr: d.critic_lr,
            cmg_lr: d.cmg_lr,
            total_steps: d.total_steps,
            buffer_size: d.buffer_size,
            minibatch: d.minibatch,
            eval_every: d.eval_every,
            eval_episodes: d.eval_episodes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Tracking trials per reference trajectory.
    pub episodes: usize,
    /// Distinct reference trajectories.
    pub trajectories: usize,
    pub confidence: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 10,
            trajectories: 10,
            confidence: 0.95,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_error(de, path)
    }

    pub fn train_config(&self, identity_metric: bool) -> TrainConfig {
        TrainConfig {
            total_steps: self.ppo.total_steps,
            buffer_size: self.ppo.buffer_size,
            minibatch: self.ppo.minibatch,
            k_epochs: self.ppo.k_epochs,
            gamma: self.ppo.gamma,
            gae_lambda: self.ppo.gae_lambda,
            clip: self.ppo.clip,
            target_kl: self.ppo.target_kl,
            beta_pi: self.ppo.beta_pi,
            actor_lr: self.ppo.actor_lr,
            critic_lr: self.ppo.critic_lr,
            cmg_lr: self.ppo.cmg_lr,
            cmg_every: self.cmg.n,
            identity_metric,
            lambda: self.cmg.lambda,
            beta_m: self.cmg.beta_m,
            n_z: self.cmg.n_z,
            w_lb: self.cmg.w_lb,
            w_ub: self.cmg.w_ub,
            eval_every: self.ppo.eval_every,
            eval_episodes: self.ppo.eval_episodes,
        }
    }

    /// Canonical content hash: sha256 over the serialized parsed form, so
    /// formatting differences do not change the hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

fn serde_path_error(
    de: &mut serde_json::Deserializer<serde_json::de::StrRead>,
    path: &Path,
) -> Result<RunConfig, String> {
    RunConfig::deserialize(de).map_err(|e| format!("invalid config {}: {e}", path.display()))
}
