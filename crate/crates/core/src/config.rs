use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Single-sentence refinement or few-sentence fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Ss,
    Fs,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Ss => "ss",
            Scenario::Fs => "fs",
        })
    }
}

impl FromStr for Scenario {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ss" => Ok(Scenario::Ss),
            "fs" => Ok(Scenario::Fs),
            other => Err(DomainError::Invalid(format!(
                "unknown scenario {other:?} (expected ss or fs)"
            ))),
        }
    }
}

/// Network trunk shared by the policy and value heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// One token per state segment, self-attention blocks, mean pooling.
    Sequence,
    /// Fully connected layers over the flattened state.
    Mlp,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Sequence => "sequence",
            EncoderKind::Mlp => "mlp",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sequence" | "transformer" => Ok(EncoderKind::Sequence),
            "mlp" => Ok(EncoderKind::Mlp),
            other => Err(DomainError::Invalid(format!(
                "unknown encoder {other:?} (expected sequence or mlp)"
            ))),
        }
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RLConfig {
    /// Discount factor.
    pub gamma: f64,
    /// Weight of the normalized quality score in the fused score.
    pub lambda1: f64,
    /// Weight of the intelligibility penalty in the fused score.
    pub lambda2: f64,
    /// Episode length for single-sentence refinement.
    pub steps_ss: usize,
    /// Episode length for few-sentence fusion.
    pub steps_fs: usize,
    /// Multiplier applied to the squashed refinement before it touches the embedding.
    pub action_scale: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    /// Environment steps collected per PPO update (rounded up to whole episodes).
    pub rollout_batch: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub init_log_std: f64,
    /// Number of collect-then-update iterations.
    pub train_iterations: usize,
    pub encoder: EncoderKind,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
    pub d_e: usize,
    pub d_t: usize,
    /// Number of reference embeddings per speaker.
    pub k: usize,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            lambda1: 0.5,
            lambda2: 0.1,
            steps_ss: 3,
            steps_fs: 1,
            action_scale: 0.001,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            update_epochs: 4,
            rollout_batch: 256,
            minibatch_size: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            init_log_std: 0.0,
            train_iterations: 1500,
            encoder: EncoderKind::Sequence,
            hidden: 64,
            layers: 2,
            seed: 0,
            d_e: 16,
            d_t: 8,
            k: 1,
        }
    }
}

impl RLConfig {
    pub fn steps(&self, scenario: Scenario) -> usize {
        match scenario {
            Scenario::Ss => self.steps_ss,
            Scenario::Fs => self.steps_fs,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: String| Err(DomainError::Invalid(msg));
        let unit = |name: &str, v: f64| -> Result<(), DomainError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                bad(format!("{name} must lie in [0, 1], got {v}"))
            }
        };
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative real, got {v}"));
            }
        }
        for (name, v) in [
            ("action_scale", self.action_scale),
            ("clip_epsilon", self.clip_epsilon),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        // A zero learning rate is a legitimate no-learning control run.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        for (name, v) in [
            ("steps_ss", self.steps_ss),
            ("steps_fs", self.steps_fs),
            ("update_epochs", self.update_epochs),
            ("rollout_batch", self.rollout_batch),
            ("minibatch_size", self.minibatch_size),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("d_e", self.d_e),
            ("d_t", self.d_t),
            ("k", self.k),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.init_log_std.is_finite() {
            return bad("init_log_std must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RLConfig::default();
        assert_eq!(c.gamma, 0.3);
        assert_eq!(c.lambda1, 0.5);
        assert_eq!(c.lambda2, 0.1);
        assert_eq!(c.steps_ss, 3);
        assert_eq!(c.steps_fs, 1);
        assert_eq!(c.action_scale, 0.001);
        assert_eq!(c.clip_epsilon, 0.2);
        assert_eq!(c.gae_lambda, 0.95);
        assert_eq!(c.learning_rate, 3e-4);
        assert_eq!(c.update_epochs, 4);
        assert_eq!(c.rollout_batch, 256);
        assert_eq!(c.entropy_coef, 0.01);
        assert_eq!(c.value_coef, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let c = RLConfig {
            gamma: 1.5,
            ..RLConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RLConfig {
            action_scale: 0.0,
            ..RLConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RLConfig {
            steps_ss: 0,
            ..RLConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn parses_names() {
        assert_eq!("SS".parse::<Scenario>().unwrap(), Scenario::Ss);
        assert_eq!("mlp".parse::<EncoderKind>().unwrap(), EncoderKind::Mlp);
        assert!("xs".parse::<Scenario>().is_err());
    }
}
