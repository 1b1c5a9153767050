use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::policy::{Policy, SampleMode};
use super::ppo::{ppo_update, Adam, LossReport, RolloutBatch};
use super::AgentError;
use crate::config::RLConfig;
use crate::env::{Env, SpeakerProfile, Utterance};
use crate::rng::Rng;
use crate::scoring::ScoreTriple;

/// Outcome of one training episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub speaker: u64,
    pub text: u64,
    pub initial_fused: f64,
    pub final_fused: f64,
    pub final_score: ScoreTriple,
}

/// One collect-then-update iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub episodes: Vec<EpisodeSummary>,
    pub loss: LossReport,
    pub batch_size: usize,
}

/// Owns the policy, its optimizer and the rollout random stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    policy: Policy,
    adam: Adam,
    config: RLConfig,
    rng: Rng,
    step: u64,
}

impl Trainer {
    pub fn new(policy: Policy, config: RLConfig, rng: Rng) -> Self {
        let adam = Adam::new(&policy);
        Self {
            policy,
            adam,
            config,
            rng,
            step: 0,
        }
    }

    /// Resumes from a checkpoint (optimizer moments start fresh).
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let mut t = Self::new(ckpt.policy, ckpt.config, ckpt.rng);
        t.step = ckpt.step;
        t
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            rng: self.rng.clone(),
            policy: self.policy.clone(),
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut Policy {
        &mut self.policy
    }

    pub fn config(&self) -> &RLConfig {
        &self.config
    }

    /// Completed updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Samples whole episodes on random tasks until the batch holds at least
    /// `rollout_batch` transitions.
    pub fn collect(
        &mut self,
        env: &mut Env,
        tasks: &[(&SpeakerProfile, &Utterance)],
    ) -> Result<(RolloutBatch, Vec<EpisodeSummary>), AgentError> {
        if tasks.is_empty() {
            return Err(AgentError::Config("no training tasks".into()));
        }
        let spec = self.policy.spec();
        let mut batch = RolloutBatch::new(spec.state_len(), spec.action_dim);
        let mut episodes = Vec::new();
        while batch.len() < self.config.rollout_batch {
            let (profile, text) = tasks[self.rng.random_range(0..tasks.len())];
            let mut state = env.reset(profile, text)?;
            let initial_fused = env.current_fused().expect("episode started");
            loop {
                let sample = self
                    .policy
                    .select_action(&state, SampleMode::Sample, &mut self.rng)?;
                let t = env.step(&sample.action)?;
                batch.push(&state, &sample, t.reward, t.done);
                if t.done {
                    episodes.push(EpisodeSummary {
                        speaker: profile.id,
                        text: text.id,
                        initial_fused,
                        final_fused: t.fused,
                        final_score: t.score,
                    });
                    break;
                }
                state = t.next_state;
            }
        }
        let normalize = self.config.normalize_advantages && batch.len() > 1;
        batch.finish(self.config.gamma, self.config.gae_lambda, normalize)?;
        Ok((batch, episodes))
    }

    pub fn update(&mut self, batch: &RolloutBatch) -> Result<LossReport, AgentError> {
        let report = ppo_update(
            &mut self.policy,
            &mut self.adam,
            batch,
            &self.config,
            &mut self.rng,
        )?;
        self.step += 1;
        Ok(report)
    }

    pub fn iteration(
        &mut self,
        env: &mut Env,
        tasks: &[(&SpeakerProfile, &Utterance)],
    ) -> Result<IterationReport, AgentError> {
        let (batch, episodes) = self.collect(env, tasks)?;
        let loss = self.update(&batch)?;
        Ok(IterationReport {
            episodes,
            loss,
            batch_size: batch.len(),
        })
    }
}
