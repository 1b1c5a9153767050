use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::network::{Forward, Network, NetworkSpec};
use super::params::ParamLayout;
use super::AgentError;
use crate::action::Action;
use crate::config::Scenario;
use crate::rng::Rng;
use crate::state::StateVector;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Log-density of `u` under a diagonal Gaussian.
pub fn gaussian_log_density(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &m), &ls)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `Σ log(1 − tanh²(u_i))`, evaluated without cancellation for large `|u|`.
pub fn tanh_log_det(u: &[f64]) -> f64 {
    u.iter()
        .map(|&x| 2.0 * (std::f64::consts::LN_2 - x - softplus(-2.0 * x)))
        .sum()
}

/// Log-density of the emitted action: squashed for SS, raw logits for FS.
pub fn action_log_prob(scenario: Scenario, u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let base = gaussian_log_density(u, mean, log_std);
    match scenario {
        Scenario::Ss => base - tanh_log_det(u),
        Scenario::Fs => base,
    }
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Draw from the policy distribution.
    Sample,
    /// Return the distribution mode (deterministic).
    Mode,
}

/// An action together with what PPO needs to re-evaluate it later.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Action,
    /// Pre-squash Gaussian draw.
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

pub fn validate_spec(spec: &NetworkSpec) -> Result<(), AgentError> {
    if spec.hidden == 0 || spec.layers == 0 || spec.action_dim == 0 {
        return Err(AgentError::Config(
            "hidden width, layer count and action dimension must be positive".into(),
        ));
    }
    if spec.scenario == Scenario::Ss && spec.action_dim != spec.dims.d_e {
        return Err(AgentError::Config(format!(
            "ss policies act in embedding space (dimension {}), got action dimension {}",
            spec.dims.d_e, spec.action_dim
        )));
    }
    Ok(())
}

/// Network architecture plus its current parameters.
#[derive(Debug, Clone)]
pub struct Policy {
    net: Network,
    params: Vec<f64>,
}

impl Policy {
    pub fn new(spec: NetworkSpec, init_log_std: f64, rng: &mut Rng) -> Result<Self, AgentError> {
        validate_spec(&spec)?;
        let net = Network::new(spec);
        let params = net.init(init_log_std, rng);
        Ok(Self { net, params })
    }

    /// Rebuilds a policy from stored parameters.
    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self, AgentError> {
        validate_spec(&spec)?;
        let net = Network::new(spec);
        if params.len() != net.layout().total() {
            return Err(AgentError::Config(format!(
                "expected {} parameters, got {}",
                net.layout().total(),
                params.len()
            )));
        }
        Ok(Self { net, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn layout(&self) -> &ParamLayout {
        self.net.layout()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        self.layout().trainable_count()
    }

    /// L2 norm of every named tensor.
    pub fn param_norms(&self) -> Vec<(String, f64)> {
        self.layout()
            .entries()
            .iter()
            .map(|e| {
                let n = self.params[e.range()].iter().map(|v| v * v).sum::<f64>().sqrt();
                (e.name.clone(), n)
            })
            .collect()
    }

    /// Sets observation normalization to the per-coordinate mean and standard
    /// deviation of `states`. Near-constant coordinates keep unit scale.
    pub fn fit_obs_norm(&mut self, states: &[StateVector]) -> Result<(), AgentError> {
        let l = self.spec().state_len();
        if states.is_empty() {
            return Err(AgentError::Config("no states to fit normalization on".into()));
        }
        let mut mean = vec![0.0; l];
        for s in states {
            self.check_state(s)?;
            for (m, v) in mean.iter_mut().zip(s.as_slice()) {
                *m += v;
            }
        }
        let n = states.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; l];
        for s in states {
            for ((q, v), m) in var.iter_mut().zip(s.as_slice()).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|q| {
                let sd = (q / n).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let (rm, rs) = self.net.obs_ranges();
        self.params[rm].copy_from_slice(&mean);
        self.params[rs].copy_from_slice(&std);
        Ok(())
    }

    pub fn check_state(&self, state: &StateVector) -> Result<(), AgentError> {
        let l = self.spec().state_len();
        if state.len() != l {
            return Err(AgentError::StateLength {
                expected: l,
                actual: state.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, states: ArrayView2<'_, f64>) -> Forward {
        self.net.forward(&self.params, states)
    }

    fn nonfinite(&self, what: &str) -> AgentError {
        AgentError::NonFiniteOutput {
            what: what.to_string(),
            norms: self.param_norms(),
        }
    }

    pub fn select_action(
        &self,
        state: &StateVector,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<ActionSample, AgentError> {
        self.check_state(state)?;
        let x = ArrayView2::from_shape((1, state.len()), state.as_slice()).expect("one row");
        let fwd = self.forward(x);
        let mean = fwd.mean.row(0).to_vec();
        let log_std = fwd.log_std.to_vec();
        let value = fwd.value[0];
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(self.nonfinite("action mean"));
        }
        if !value.is_finite() {
            return Err(self.nonfinite("value"));
        }
        let raw: Vec<f64> = match mode {
            SampleMode::Mode => mean.clone(),
            SampleMode::Sample => mean
                .iter()
                .zip(&log_std)
                .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let scenario = self.spec().scenario;
        let log_prob = action_log_prob(scenario, &raw, &mean, &log_std);
        if !log_prob.is_finite() {
            return Err(self.nonfinite("log-probability"));
        }
        let action = match scenario {
            Scenario::Ss => Action::Ss {
                delta: raw.iter().map(|u| u.tanh()).collect(),
            },
            Scenario::Fs => Action::Fs {
                logits: raw.clone(),
            },
        };
        Ok(ActionSample {
            action,
            raw,
            log_prob,
            value,
        })
    }

    /// Batched state values.
    pub fn values(&self, states: &Array2<f64>) -> Vec<f64> {
        self.forward(states.view()).value.to_vec()
    }
}
