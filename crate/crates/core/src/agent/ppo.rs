use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::policy::{action_log_prob, gaussian_entropy, ActionSample, Policy};
use super::AgentError;
use crate::config::RLConfig;
use crate::rng::Rng;
use crate::state::StateVector;

/// Ratios above this reject the whole update.
pub const MAX_RATIO: f64 = 1e3;

/// Generalized advantage estimation over a sequence of whole episodes.
///
/// A `done` step has no successor; the end of the sequence is treated the
/// same way. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(AgentError::Shape(format!(
            "rewards/values/dones lengths differ: {n}/{}/{}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        if dones[t] || t + 1 == n {
            next_adv = 0.0;
            next_value = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        adv[t] = delta + gamma * gae_lambda * next_adv;
        next_adv = adv[t];
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

/// Zero mean, unit variance. Single-element batches are left alone; batches
/// with variance below 1e−8 are only centred.
pub fn normalize(values: &mut [f64]) {
    let n = values.len();
    if n < 2 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var < 1e-8 { 1.0 } else { var.sqrt() };
    for v in values.iter_mut() {
        *v = (*v - mean) / scale;
    }
}

/// Transitions collected under one parameter snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    state_len: usize,
    action_dim: usize,
    pub states: Vec<f64>,
    pub raw_actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(state_len: usize, action_dim: usize) -> Self {
        Self {
            state_len,
            action_dim,
            states: Vec::new(),
            raw_actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn push(&mut self, state: &StateVector, sample: &ActionSample, reward: f64, done: bool) {
        debug_assert_eq!(state.len(), self.state_len);
        debug_assert_eq!(sample.raw.len(), self.action_dim);
        self.states.extend_from_slice(state.as_slice());
        self.raw_actions.extend_from_slice(&sample.raw);
        self.log_probs.push(sample.log_prob);
        self.values.push(sample.value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    /// Computes advantages and returns; normalizes advantages when asked.
    pub fn finish(&mut self, gamma: f64, gae_lambda: f64, normalize_advantages: bool) -> Result<(), AgentError> {
        let (mut adv, ret) = gae(&self.rewards, &self.values, &self.dones, gamma, gae_lambda)?;
        if normalize_advantages {
            normalize(&mut adv);
        }
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }

    pub fn state_matrix(&self, idx: &[usize]) -> Array2<f64> {
        gather(&self.states, self.state_len, idx)
    }

    pub fn action_matrix(&self, idx: &[usize]) -> Array2<f64> {
        gather(&self.raw_actions, self.action_dim, idx)
    }

    fn check(&self) -> Result<(), AgentError> {
        let n = self.len();
        if self.states.len() != n * self.state_len
            || self.raw_actions.len() != n * self.action_dim
            || self.log_probs.len() != n
            || self.values.len() != n
            || self.dones.len() != n
            || self.advantages.len() != n
            || self.returns.len() != n
        {
            return Err(AgentError::Shape(
                "batch sequences differ in length (was finish() called?)".into(),
            ));
        }
        Ok(())
    }
}

fn gather(flat: &[f64], width: usize, idx: &[usize]) -> Array2<f64> {
    let mut m = Array2::zeros((idx.len(), width));
    for (mut row, &i) in m.rows_mut().into_iter().zip(idx) {
        row.assign(&ndarray::ArrayView1::from(&flat[i * width..(i + 1) * width]));
    }
    m
}

/// Loss weights and clipping for one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoCoefs {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&RLConfig> for PpoCoefs {
    fn from(c: &RLConfig) -> Self {
        Self {
            clip_epsilon: c.clip_epsilon,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Negated mean clipped surrogate.
    pub policy_loss: f64,
    /// Mean squared value error.
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Mean of `(ρ − 1) − ln ρ`, a non-negative KL estimate.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Full PPO loss on the samples `idx` of `batch`, and its gradient with
/// respect to every parameter (zero for non-trainable entries).
pub fn loss_and_gradient(
    policy: &Policy,
    batch: &RolloutBatch,
    idx: &[usize],
    coefs: &PpoCoefs,
) -> Result<(LossReport, Vec<f64>), AgentError> {
    let b = idx.len();
    if b == 0 {
        return Err(AgentError::Shape("empty minibatch".into()));
    }
    let scenario = policy.spec().scenario;
    let states = batch.state_matrix(idx);
    let actions = batch.action_matrix(idx);
    let fwd = policy.forward(states.view());
    let log_std = fwd.log_std.to_vec();
    let sigma2: Vec<f64> = log_std.iter().map(|ls| (2.0 * ls).exp()).collect();
    let a_dim = log_std.len();
    let inv_b = 1.0 / b as f64;

    let mut d_mean = Array2::zeros((b, a_dim));
    let mut d_log_std = Array1::from_elem(a_dim, -coefs.entropy_coef);
    let mut d_value = Array1::zeros(b);
    let mut report = LossReport::default();
    for (row, &i) in idx.iter().enumerate() {
        let u = actions.row(row);
        let u = u.as_slice().expect("contiguous row");
        let mean = fwd.mean.row(row);
        let mean = mean.as_slice().expect("contiguous row");
        let new_lp = action_log_prob(scenario, u, mean, &log_std);
        let ratio = (new_lp - batch.log_probs[i]).exp();
        if !ratio.is_finite() || ratio > MAX_RATIO {
            return Err(AgentError::ExplodingRatio {
                ratio,
                sample: i,
                new_log_prob: new_lp,
                old_log_prob: batch.log_probs[i],
            });
        }
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - coefs.clip_epsilon, 1.0 + coefs.clip_epsilon) * adv;
        report.policy_loss -= unclipped.min(clipped) * inv_b;
        if (ratio - 1.0).abs() > coefs.clip_epsilon {
            report.clip_fraction += inv_b;
        }
        report.approx_kl += ((ratio - 1.0) - ratio.ln()) * inv_b;
        if unclipped <= clipped {
            // d(−ρA/B)/d(log π) = −ρA/B
            let d_lp = -unclipped * inv_b;
            for a in 0..a_dim {
                let diff = u[a] - mean[a];
                d_mean[[row, a]] = d_lp * diff / sigma2[a];
                d_log_std[a] += d_lp * (diff * diff / sigma2[a] - 1.0);
            }
        }
        let err = fwd.value[row] - batch.returns[i];
        report.value_loss += err * err * inv_b;
        d_value[row] = coefs.value_coef * 2.0 * err * inv_b;
    }
    report.entropy = gaussian_entropy(&log_std);
    report.total = report.policy_loss + coefs.value_coef * report.value_loss
        - coefs.entropy_coef * report.entropy;
    let grad = policy
        .network()
        .backward(policy.params(), &fwd, &d_mean, &d_log_std, &d_value);
    Ok((report, grad))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    trainable: Vec<bool>,
}

impl Adam {
    pub fn new(policy: &Policy) -> Self {
        let n = policy.layout().total();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            trainable: policy.layout().trainable_mask(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if !self.trainable[i] {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Clipped-surrogate PPO epochs over shuffled minibatches.
///
/// The batch must have been [`RolloutBatch::finish`]ed. If any probability
/// ratio explodes the parameters and optimizer state are restored and the
/// batch is rejected.
pub fn ppo_update(
    policy: &mut Policy,
    adam: &mut Adam,
    batch: &RolloutBatch,
    config: &RLConfig,
    rng: &mut Rng,
) -> Result<LossReport, AgentError> {
    batch.check()?;
    if batch.is_empty() {
        return Err(AgentError::Shape("empty batch".into()));
    }
    let coefs = PpoCoefs::from(config);
    let saved_params = policy.params().to_vec();
    let saved_adam = adam.clone();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut sum = LossReport::default();
    let mut count = 0.0;
    for _ in 0..config.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let (report, mut grad) = match loss_and_gradient(policy, batch, chunk, &coefs) {
                Ok(r) => r,
                Err(e) => {
                    policy.params_mut().copy_from_slice(&saved_params);
                    *adam = saved_adam;
                    return Err(e);
                }
            };
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                policy.params_mut().copy_from_slice(&saved_params);
                *adam = saved_adam;
                return Err(AgentError::NonFiniteGradient {
                    parameter: policy
                        .layout()
                        .entries()
                        .iter()
                        .find(|e| e.range().contains(&i))
                        .map(|e| e.name.clone())
                        .unwrap_or_default(),
                    norms: policy.param_norms(),
                });
            }
            let norm = clip_grad_norm(&mut grad, config.max_grad_norm);
            adam.step(policy.params_mut(), &grad, config.learning_rate);
            sum.policy_loss += report.policy_loss;
            sum.value_loss += report.value_loss;
            sum.entropy += report.entropy;
            sum.total += report.total;
            sum.approx_kl += report.approx_kl;
            sum.clip_fraction += report.clip_fraction;
            sum.grad_norm += norm;
            count += 1.0;
        }
    }
    Ok(LossReport {
        policy_loss: sum.policy_loss / count,
        value_loss: sum.value_loss / count,
        entropy: sum.entropy / count,
        total: sum.total / count,
        approx_kl: sum.approx_kl / count,
        clip_fraction: sum.clip_fraction / count,
        grad_norm: sum.grad_norm / count,
    })
}
