//! Contraction actor-critic (CAC) for path tracking under unknown dynamics.
//!
//! The crate learns a control-affine dynamics model from rollout data, trains
//! a contraction metric generator (CMG) against the contraction and CCM
//! conditions, and optimizes a PPO tracking policy whose reward is shaped by
//! the generated metric. Evaluation utilities compute the MAUC tracking
//! metric and run numerical checks of the underlying theory.

pub mod cac;
pub mod ccm;
pub mod envs;
pub mod error;
pub mod net;
pub mod numerics;
pub mod report;
pub mod rng;
pub mod sysid;

pub use error::CoreError;
pub use numerics::{Mat, Vector};
pub use rng::Rng;

pub type Result<T> = std::result::Result<T, CoreError>;
