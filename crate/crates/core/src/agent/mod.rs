//! PPO learner: actor-critic network, rollouts, GAE, clipped-surrogate
//! updates and checkpoints.

pub mod checkpoint;
pub mod network;
pub mod params;
pub mod policy;
pub mod ppo;
pub mod trainer;

use thiserror::Error;

use crate::config::{RLConfig, Scenario};
use crate::env::EnvError;
use crate::rng::Rng;
use crate::state::{SegmentMask, StateDims};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use network::{Forward, Network, NetworkSpec, LOG_STD_MAX, LOG_STD_MIN};
pub use params::{ParamEntry, ParamLayout};
pub use policy::{
    action_log_prob, gaussian_entropy, gaussian_log_density, tanh_log_det, ActionSample, Policy,
    SampleMode,
};
pub use ppo::{
    clip_grad_norm, clipped_surrogate, gae, loss_and_gradient, normalize, ppo_update, Adam,
    LossReport, PpoCoefs, RolloutBatch, MAX_RATIO,
};
pub use trainer::{EpisodeSummary, IterationReport, Trainer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("state has length {actual}, the network expects {expected}")]
    StateLength { expected: usize, actual: usize },
    #[error("network produced a non-finite {what}; parameter norms: {norms:?}")]
    NonFiniteOutput {
        what: String,
        norms: Vec<(String, f64)>,
    },
    #[error("non-finite gradient in {parameter}; parameter norms: {norms:?}")]
    NonFiniteGradient {
        parameter: String,
        norms: Vec<(String, f64)>,
    },
    #[error(
        "probability ratio {ratio:e} on sample {sample} (log-prob {new_log_prob} now, {old_log_prob} at collection); batch rejected"
    )]
    ExplodingRatio {
        ratio: f64,
        sample: usize,
        new_log_prob: f64,
        old_log_prob: f64,
    },
    #[error("batch shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Network spec implied by a training config.
pub fn network_spec(config: &RLConfig, scenario: Scenario, dims: StateDims, mask: SegmentMask) -> NetworkSpec {
    NetworkSpec {
        encoder: config.encoder,
        hidden: config.hidden,
        layers: config.layers,
        scenario,
        action_dim: match scenario {
            Scenario::Ss => dims.d_e,
            Scenario::Fs => config.k,
        },
        dims,
        mask,
    }
}

/// A freshly initialized trainer drawing from the `policy-init` and `rollout` substreams.
pub fn new_trainer(
    config: &RLConfig,
    scenario: Scenario,
    dims: StateDims,
    mask: SegmentMask,
) -> Result<Trainer, AgentError> {
    let spec = network_spec(config, scenario, dims, mask);
    let mut init_rng: Rng = crate::rng::substream(config.seed, "policy-init");
    let policy = Policy::new(spec, config.init_log_std, &mut init_rng)?;
    Ok(Trainer::new(
        policy,
        config.clone(),
        crate::rng::substream(config.seed, "rollout"),
    ))
}
