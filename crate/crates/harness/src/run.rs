//! Training and evaluation of one experiment.

use std::sync::Arc;

use asrrl_core::agent::{new_trainer, AgentError, Checkpoint, Policy, SampleMode, Trainer};
use asrrl_core::env::{
    oracle_best, run_episode, Env, EnvOptions, GridSpec, OracleResult, SpeakerProfile, Utterance,
    VoiceModel,
};
use asrrl_core::rng::substream;
use asrrl_core::scoring::ScoreTriple;
use asrrl_core::{EpisodeTrace, Scenario, StateVector};
use log::{info, warn};

use crate::corpus::{Corpus, Split};
use crate::error::{HarnessError, Result};
use crate::finetune::finetune_proxy;
use crate::records::{RunRow, Variant};
use crate::settings::ExperimentSpec;

/// Embeddings up to this dimension get an exhaustive oracle baseline.
pub const ORACLE_MAX_DIM: usize = 3;

/// A speaker/text pair an episode runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub profile: SpeakerProfile,
    pub text: Utterance,
}

/// An experiment bound to its corpus.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub corpus: Arc<Corpus>,
    pub model: Arc<dyn VoiceModel>,
    pub split: Split,
}

impl Experiment {
    pub fn new(mut spec: ExperimentSpec, corpus: Arc<Corpus>) -> Result<Self> {
        spec.rl.d_e = corpus.spec.d_e;
        spec.rl.d_t = corpus.spec.d_t;
        spec.corpus = corpus.spec;
        spec.validate()?;
        match spec.scenario {
            Scenario::Fs if spec.rl.k < 2 || spec.rl.k > corpus.spec.refs => {
                return Err(HarnessError::Config(format!(
                    "fs needs 2 <= k <= {} (references in the corpus), got k = {}",
                    corpus.spec.refs, spec.rl.k
                )))
            }
            _ => {}
        }
        let model = corpus.spec.model()?;
        let split = corpus.split(spec.eval_fraction)?;
        Ok(Self {
            spec,
            corpus,
            model,
            split,
        })
    }

    pub fn env_options(&self) -> EnvOptions {
        EnvOptions {
            mask: self.spec.mask,
            weights: self.spec.weights(),
            ..EnvOptions::from_config(&self.spec.rl, self.spec.scenario)
        }
    }

    pub fn env(&self) -> Result<Env> {
        Ok(Env::new(Arc::clone(&self.model), self.env_options())?)
    }

    fn single(profile: &SpeakerProfile, j: usize) -> SpeakerProfile {
        SpeakerProfile {
            refs: vec![profile.refs[j].clone()],
            ..profile.clone()
        }
    }

    /// Training episodes: in SS every reference of a training speaker is its
    /// own single-reference task; in FS each speaker uses its first `k` references.
    pub fn train_tasks(&self) -> Vec<Task> {
        let mut tasks = Vec::new();
        for &i in &self.split.train {
            let rec = &self.corpus.speakers[i];
            let profiles: Vec<SpeakerProfile> = match self.spec.scenario {
                Scenario::Ss => (0..rec.profile.refs.len())
                    .map(|j| Self::single(&rec.profile, j))
                    .collect(),
                Scenario::Fs => vec![rec.profile.with_refs(self.spec.rl.k)],
            };
            for profile in profiles {
                for text in &rec.texts {
                    tasks.push(Task {
                        profile: profile.clone(),
                        text: text.clone(),
                    });
                }
            }
        }
        tasks
    }

    /// Held-out episodes: SS uses the first reference only.
    pub fn eval_tasks(&self) -> Vec<Task> {
        let mut tasks = Vec::new();
        for &i in &self.split.eval {
            let rec = &self.corpus.speakers[i];
            let profile = match self.spec.scenario {
                Scenario::Ss => Self::single(&rec.profile, 0),
                Scenario::Fs => rec.profile.with_refs(self.spec.rl.k),
            };
            let n = match self.spec.eval_texts {
                0 => rec.texts.len(),
                n => n.min(rec.texts.len()),
            };
            for text in &rec.texts[..n] {
                tasks.push(Task {
                    profile: profile.clone(),
                    text: text.clone(),
                });
            }
        }
        tasks
    }

    fn row(&self, variant: Variant, episode: usize, ids: (u64, u64), score: &ScoreTriple, fused: f64) -> RunRow {
        RunRow {
            run_id: self.spec.run_id.clone(),
            scenario: self.spec.scenario.to_string(),
            gamma: self.spec.rl.gamma,
            action_scale: self.spec.rl.action_scale,
            steps: self.spec.rl.steps(self.spec.scenario),
            seed: self.spec.rl.seed,
            episode,
            speaker: ids.0,
            text: ids.1,
            sim: score.sim(),
            mos: score.mos(),
            intell: score.intell(),
            fused,
            variant,
        }
    }

    /// Brute-force optimum over the region an episode can reach: the action
    /// box around the start (SS) or the bounding box of the references (FS).
    pub fn oracle(&self, task: &Task) -> Result<OracleResult> {
        let env = self.env()?;
        let start = env.initial_embedding(&task.profile)?;
        let n = self.spec.oracle_points;
        let grid = match self.spec.scenario {
            Scenario::Ss => {
                let reach = self.spec.rl.action_scale * self.spec.rl.steps_ss as f64;
                GridSpec::around(start.as_slice(), reach, n)
            }
            Scenario::Fs => {
                let d = start.dim();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for r in &task.profile.refs {
                    for (i, v) in r.as_slice().iter().enumerate() {
                        lo[i] = lo[i].min(*v);
                        hi[i] = hi[i].max(*v);
                    }
                }
                GridSpec {
                    lo,
                    hi,
                    points: vec![n; d],
                }
            }
        };
        Ok(oracle_best(
            self.model.as_ref(),
            &self.spec.weights(),
            &task.text.features,
            &task.profile.target_voiceprint,
            &grid,
        )?)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    /// One row per training episode.
    pub rows: Vec<RunRow>,
    /// Updates rejected by the ratio guard.
    pub rejected_updates: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        self.trainer.checkpoint()
    }

    pub fn policy(&self) -> &Policy {
        self.trainer.policy()
    }
}

/// Trains a fresh policy on the experiment's training speakers.
pub fn train(exp: &Experiment) -> Result<TrainOutcome> {
    let spec = &exp.spec;
    let mut env = exp.env()?;
    let mut trainer = new_trainer(&spec.rl, spec.scenario, env.dims(), spec.mask)?;
    let tasks = exp.train_tasks();
    let initial: Vec<StateVector> = tasks
        .iter()
        .map(|t| env.reset(&t.profile, &t.text))
        .collect::<std::result::Result<_, _>>()?;
    trainer.policy_mut().fit_obs_norm(&initial)?;
    let refs: Vec<(&SpeakerProfile, &Utterance)> =
        tasks.iter().map(|t| (&t.profile, &t.text)).collect();

    let mut rows = Vec::new();
    let mut collapsed = 0usize;
    let mut rejected = 0usize;
    for it in 0..spec.rl.train_iterations {
        let (batch, episodes) = trainer.collect(&mut env, &refs)?;
        for ep in &episodes {
            let ids = (ep.speaker, ep.text);
            rows.push(exp.row(Variant::Rl, rows.len(), ids, &ep.final_score, ep.final_fused));
            let floor = ep.initial_fused - spec.divergence_drop * ep.initial_fused.abs();
            if ep.final_fused < floor {
                collapsed += 1;
                if collapsed >= spec.divergence_window {
                    return Err(HarnessError::Divergence(format!(
                        "{collapsed} consecutive episodes ended more than {:.0}% below their raw score (iteration {it}, last {:.4} vs raw {:.4})",
                        spec.divergence_drop * 100.0,
                        ep.final_fused,
                        ep.initial_fused
                    )));
                }
            } else {
                collapsed = 0;
            }
        }
        match trainer.update(&batch) {
            Ok(report) => {
                if it % 50 == 0 || it + 1 == spec.rl.train_iterations {
                    let gain = episodes
                        .iter()
                        .map(|e| e.final_fused - e.initial_fused)
                        .sum::<f64>()
                        / episodes.len() as f64;
                    info!(
                        "{} iteration {it}: mean episode gain {gain:.5}, policy loss {:.4}, value loss {:.3e}, kl {:.2e}",
                        spec.run_id, report.policy_loss, report.value_loss, report.approx_kl
                    );
                }
            }
            Err(e @ AgentError::ExplodingRatio { .. }) => {
                rejected += 1;
                warn!("{}: update rejected: {e}", spec.run_id);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(TrainOutcome {
        trainer,
        rows,
        rejected_updates: rejected,
    })
}

/// Mode-action episode of `policy` on one task.
pub fn rollout(env: &mut Env, policy: &Policy, task: &Task) -> Result<EpisodeTrace> {
    let mut rng = substream(0, "mode");
    let trace = run_episode(env, &task.profile, &task.text, |s| {
        policy
            .select_action(s, SampleMode::Mode, &mut rng)
            .map(|a| a.action)
            .map_err(|e| asrrl_core::DomainError::Invalid(e.to_string()).into())
    })?;
    Ok(trace)
}

/// Evaluates the requested variants on every held-out episode.
///
/// `policy` is required for [`Variant::Rl`]; the oracle is skipped (with a
/// warning) when the embedding is too large to grid.
pub fn evaluate(exp: &Experiment, policy: Option<&Policy>, variants: &[Variant]) -> Result<Vec<RunRow>> {
    let mut env = exp.env()?;
    let tasks = exp.eval_tasks();
    let mut rows = Vec::new();
    for &variant in variants {
        if variant == Variant::Oracle && exp.corpus.spec.d_e > ORACLE_MAX_DIM {
            warn!(
                "oracle skipped: d_e = {} exceeds {ORACLE_MAX_DIM}",
                exp.corpus.spec.d_e
            );
            continue;
        }
        for (i, task) in tasks.iter().enumerate() {
            let (score, fused) = match variant {
                Variant::Raw => {
                    let e = env.initial_embedding(&task.profile)?;
                    env.score(&task.profile, &task.text, &e)?
                }
                Variant::Rl => {
                    let policy = policy.ok_or_else(|| {
                        HarnessError::Config("the rl variant needs a trained policy".into())
                    })?;
                    let trace = rollout(&mut env, policy, task)?;
                    (trace.final_score(), trace.final_fused())
                }
                Variant::Oracle => {
                    let r = exp.oracle(task)?;
                    (r.score, r.fused)
                }
                Variant::Finetune => {
                    let start = env.initial_embedding(&task.profile)?;
                    let r = finetune_proxy(
                        exp.model.as_ref(),
                        &exp.spec.weights(),
                        &task.text.features,
                        &task.profile.target_voiceprint,
                        &start,
                        exp.spec.finetune_steps,
                        exp.spec.finetune_step_size,
                    )?;
                    (r.score, r.fused)
                }
            };
            rows.push(exp.row(variant, i, (task.profile.id, task.text.id), &score, fused));
        }
    }
    Ok(rows)
}

/// Rebuilds the experiment a checkpoint was trained for on `corpus`.
pub fn experiment_for_checkpoint(
    ckpt: &Checkpoint,
    corpus: Arc<Corpus>,
    mut spec: ExperimentSpec,
) -> Result<Experiment> {
    let net = ckpt.policy.spec();
    let dims = corpus.spec.model()?.dims();
    if net.dims != dims {
        return Err(HarnessError::Config(format!(
            "checkpoint was trained for d_e = {}, d_t = {}, d_v = {} but the corpus has d_e = {}, d_t = {}, d_v = {}",
            net.dims.d_e, net.dims.d_t, net.dims.d_v, dims.d_e, dims.d_t, dims.d_v
        )));
    }
    spec.rl = ckpt.config.clone();
    spec.scenario = net.scenario;
    spec.mask = net.mask;
    info!("evaluating a policy after {} updates", ckpt.step);
    Experiment::new(spec, corpus)
}

/// Few-sentence policy against the fine-tune proxy, one FS run per reference count.
pub fn compare_finetune(spec: &ExperimentSpec, corpus: Arc<Corpus>, ks: &[f64]) -> Result<Vec<RunRow>> {
    use rayon::prelude::*;
    let runs: Vec<ExperimentSpec> = ks
        .iter()
        .map(|&k| {
            if k.fract() != 0.0 || k < 2.0 {
                return Err(HarnessError::Config(format!(
                    "reference counts must be integers >= 2, got {k}"
                )));
            }
            let mut s = spec.clone();
            s.scenario = Scenario::Fs;
            s.rl.k = k as usize;
            s.run_id = format!("{}-k={}", spec.run_id, k as usize);
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let per_run: Vec<Vec<RunRow>> = runs
        .into_par_iter()
        .map(|s| {
            let exp = Experiment::new(s, Arc::clone(&corpus))?;
            let outcome = train(&exp)?;
            evaluate(&exp, Some(outcome.policy()), &[Variant::Rl, Variant::Raw, Variant::Finetune])
        })
        .collect::<Result<_>>()?;
    Ok(per_run.into_iter().flatten().collect())
}
