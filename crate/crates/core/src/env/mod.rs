//! Episode runner and synthetic voice spaces.

pub mod oracle;
pub mod tradeoff;
pub mod voice;

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{apply_ss, fuse_fs, Action};
use crate::config::{RLConfig, Scenario};
use crate::embedding::{mean_init, Embedding, TextFeatures};
use crate::error::DomainError;
use crate::rng::Rng;
use crate::scoring::{
    fuse_scores, step_reward, RewardWeights, ScoreContext, ScoreError, ScoreTriple, ScorerSet,
    SpeechFeatures,
};
use crate::state::{flatten_state, OptionalSegments, SegmentMask, StateDims, StateVector};
use crate::trace::{EpisodeTrace, TraceStep};

pub use oracle::{oracle_best, GridSpec, OracleResult, MAX_GRID_POINTS};
pub use tradeoff::{make_tradeoff_env, TradeoffScorer, TradeoffVoice};
pub use voice::{SyntheticVoice, VoiceConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("{scenario} episodes need {needed} reference embeddings, speaker {speaker} has {actual}")]
    ReferenceCount {
        scenario: Scenario,
        needed: &'static str,
        speaker: u64,
        actual: usize,
    },
    #[error("the episode is finished; call reset first")]
    EpisodeFinished,
    #[error("no episode in progress; call reset first")]
    NotReset,
    #[error("a {scenario} episode cannot take a {action} action")]
    WrongAction {
        scenario: Scenario,
        action: &'static str,
    },
    #[error("the grid has no points")]
    EmptyGrid,
    #[error("the grid has {size} points, more than the limit of {limit}")]
    GridTooLarge { size: u128, limit: u128 },
}

/// A frozen synthesizer with its voiceprint extractor and built-in scorers.
pub trait VoiceModel: Send + Sync + Debug {
    fn dims(&self) -> StateDims;

    fn speech_dim(&self) -> usize;

    /// The fixed text target voiceprints are computed from.
    fn calibration_text(&self) -> &TextFeatures;

    fn synth(&self, f_t: &TextFeatures, e: &Embedding) -> Result<SpeechFeatures, DomainError>;

    fn voiceprint(&self, speech: &SpeechFeatures) -> Vec<f64>;

    /// Embedding re-extracted from synthesized speech (the posterior embedding).
    fn reencode(&self, speech: &SpeechFeatures) -> Embedding;

    /// Scores plus the norm of the synthesized voiceprint.
    fn score_detail(
        &self,
        f_t: &TextFeatures,
        e: &Embedding,
        target_voiceprint: &[f64],
    ) -> Result<(ScoreTriple, f64), EnvError>;

    fn score_state(
        &self,
        f_t: &TextFeatures,
        e: &Embedding,
        target_voiceprint: &[f64],
    ) -> Result<ScoreTriple, EnvError> {
        self.score_detail(f_t, e, target_voiceprint).map(|(t, _)| t)
    }

    /// Upper bound on how fast the voiceprint norm can change with `e`.
    fn voiceprint_lipschitz(&self) -> f64;

    /// Lipschitz bound of the fused score in `e`, valid wherever the
    /// voiceprint norm stays at least `min_voiceprint_norm`.
    fn lipschitz(&self, weights: &RewardWeights, min_voiceprint_norm: f64) -> f64;

    fn sample_speaker(&self, rng: &mut Rng, id: u64, k: usize) -> SpeakerProfile;

    /// The built-in scorers as plug-ins, equivalent to [`VoiceModel::score_state`].
    fn scorers(&self) -> ScorerSet;
}

/// One speaker: the hidden optimum, its noisy references and its voiceprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: u64,
    pub true_embedding: Embedding,
    pub refs: Vec<Embedding>,
    pub target_voiceprint: Vec<f64>,
}

impl SpeakerProfile {
    /// The same speaker restricted to its first `k` references.
    pub fn with_refs(&self, k: usize) -> SpeakerProfile {
        SpeakerProfile {
            refs: self.refs[..k.min(self.refs.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// A text to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: u64,
    pub features: TextFeatures,
}

/// Per-environment settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvOptions {
    pub scenario: Scenario,
    pub budget: usize,
    pub action_scale: f64,
    pub weights: RewardWeights,
    pub mask: SegmentMask,
}

impl EnvOptions {
    pub fn from_config(config: &RLConfig, scenario: Scenario) -> Self {
        Self {
            scenario,
            budget: config.steps(scenario),
            action_scale: config.action_scale,
            weights: RewardWeights::new(config.lambda1, config.lambda2),
            mask: SegmentMask::default(),
        }
    }
}

/// Result of one [`Env::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: StateVector,
    pub embedding: Embedding,
    pub reward: f64,
    pub score: ScoreTriple,
    pub fused: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
struct Episode {
    profile: SpeakerProfile,
    text: Utterance,
    embedding: Embedding,
    state: StateVector,
    fused: f64,
    steps: usize,
}

/// Environment: applies actions to the embedding, re-synthesizes and rewards the score change.
///
/// One instance runs one episode at a time; the model may be shared by many instances.
#[derive(Debug, Clone)]
pub struct Env {
    model: Arc<dyn VoiceModel>,
    options: EnvOptions,
    scorers: Option<ScorerSet>,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(model: Arc<dyn VoiceModel>, options: EnvOptions) -> Result<Self, EnvError> {
        if options.budget == 0 {
            return Err(DomainError::Invalid("step budget must be at least 1".into()).into());
        }
        if !(options.action_scale.is_finite() && options.action_scale > 0.0) {
            return Err(DomainError::BadScale(options.action_scale).into());
        }
        Ok(Self {
            model,
            options,
            scorers: None,
            episode: None,
        })
    }

    /// Routes scoring through plug-in scorers instead of the model's own formulas.
    pub fn with_scorers(mut self, scorers: ScorerSet) -> Self {
        self.scorers = Some(scorers);
        self
    }

    pub fn model(&self) -> &Arc<dyn VoiceModel> {
        &self.model
    }

    pub fn options(&self) -> &EnvOptions {
        &self.options
    }

    pub fn dims(&self) -> StateDims {
        self.model.dims()
    }

    /// Steps taken in the current episode.
    pub fn steps_taken(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn current_fused(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.fused)
    }

    /// Scores an arbitrary embedding for a speaker and text.
    pub fn score(
        &self,
        profile: &SpeakerProfile,
        text: &Utterance,
        e: &Embedding,
    ) -> Result<(ScoreTriple, f64), EnvError> {
        let triple = match &self.scorers {
            None => self
                .model
                .score_state(&text.features, e, &profile.target_voiceprint)?,
            Some(scorers) => {
                let speech = self.model.synth(&text.features, e)?;
                let ctx = ScoreContext {
                    target_voiceprint: Some(&profile.target_voiceprint),
                    text_id: Some(text.id),
                    embedding: Some(e),
                };
                scorers.score(&speech, &ctx)?
            }
        };
        Ok((triple, fuse_scores(&triple, &self.options.weights)))
    }

    /// Embedding an episode starts from: `refs[0]` (SS) or the reference mean (FS).
    pub fn initial_embedding(&self, profile: &SpeakerProfile) -> Result<Embedding, EnvError> {
        let k = profile.refs.len();
        match self.options.scenario {
            Scenario::Ss if k == 1 => Ok(profile.refs[0].clone()),
            Scenario::Ss => Err(EnvError::ReferenceCount {
                scenario: Scenario::Ss,
                needed: "exactly 1",
                speaker: profile.id,
                actual: k,
            }),
            Scenario::Fs if k >= 2 => Ok(mean_init(&profile.refs)?),
            Scenario::Fs => Err(EnvError::ReferenceCount {
                scenario: Scenario::Fs,
                needed: "at least 2",
                speaker: profile.id,
                actual: k,
            }),
        }
    }

    fn build_state(
        &self,
        profile: &SpeakerProfile,
        text: &Utterance,
        e: &Embedding,
    ) -> Result<StateVector, EnvError> {
        let mask = &self.options.mask;
        let mut optional = OptionalSegments::default();
        if mask.prior_voiceprint {
            optional.prior_voiceprint = Some(profile.target_voiceprint.clone());
        }
        if mask.needs_posterior() {
            let speech = self.model.synth(&text.features, e)?;
            if mask.posterior_embedding {
                optional.posterior_embedding = Some(self.model.reencode(&speech));
            }
            if mask.posterior_voiceprint {
                optional.posterior_voiceprint = Some(self.model.voiceprint(&speech));
            }
        }
        Ok(flatten_state(
            &self.model.dims(),
            &text.features,
            e,
            &optional,
            mask,
        )?)
    }

    /// Starts an episode and returns its initial state.
    pub fn reset(&mut self, profile: &SpeakerProfile, text: &Utterance) -> Result<StateVector, EnvError> {
        let embedding = self.initial_embedding(profile)?;
        let (_, fused) = self.score(profile, text, &embedding)?;
        let state = self.build_state(profile, text, &embedding)?;
        self.episode = Some(Episode {
            profile: profile.clone(),
            text: text.clone(),
            embedding,
            state: state.clone(),
            fused,
            steps: 0,
        });
        Ok(state)
    }

    /// The initial scores of the episode in progress.
    pub fn initial_score(&self) -> Result<(ScoreTriple, f64), EnvError> {
        let ep = self.episode.as_ref().ok_or(EnvError::NotReset)?;
        self.score(&ep.profile, &ep.text, &ep.embedding)
    }

    pub fn step(&mut self, action: &Action) -> Result<Transition, EnvError> {
        let ep = self.episode.as_ref().ok_or(EnvError::NotReset)?;
        if ep.steps >= self.options.budget {
            return Err(EnvError::EpisodeFinished);
        }
        let next = match (self.options.scenario, action) {
            (Scenario::Ss, Action::Ss { delta }) => {
                apply_ss(&ep.embedding, delta, self.options.action_scale)?
            }
            (Scenario::Fs, Action::Fs { logits }) => fuse_fs(&ep.profile.refs, logits)?.embedding,
            (scenario, other) => {
                return Err(EnvError::WrongAction {
                    scenario,
                    action: other.scenario_name(),
                })
            }
        };
        let (score, fused) = self.score(&ep.profile, &ep.text, &next)?;
        let reward = step_reward(fused, ep.fused)?;
        let state = self.build_state(&ep.profile, &ep.text, &next)?;
        let ep = self.episode.as_mut().expect("checked above");
        ep.steps += 1;
        ep.embedding = next.clone();
        ep.state = state.clone();
        ep.fused = fused;
        Ok(Transition {
            next_state: state,
            embedding: next,
            reward,
            score,
            fused,
            done: ep.steps == self.options.budget,
        })
    }
}

/// Runs one full episode, asking `policy` for an action in every state.
pub fn run_episode<F>(
    env: &mut Env,
    profile: &SpeakerProfile,
    text: &Utterance,
    mut policy: F,
) -> Result<EpisodeTrace, EnvError>
where
    F: FnMut(&StateVector) -> Result<Action, EnvError>,
{
    let mut state = env.reset(profile, text)?;
    let initial_embedding = env.initial_embedding(profile)?;
    let (initial_score, initial_fused) = env.initial_score()?;
    let mut steps = Vec::with_capacity(env.options.budget);
    loop {
        let action = policy(&state)?;
        let t = env.step(&action)?;
        let done = t.done;
        steps.push(TraceStep {
            state,
            action,
            embedding: t.embedding,
            score: t.score,
            fused: t.fused,
            reward: t.reward,
            done,
        });
        if done {
            break;
        }
        state = t.next_state;
    }
    Ok(EpisodeTrace {
        initial_embedding,
        initial_score,
        initial_fused,
        steps,
    })
}
