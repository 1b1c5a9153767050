use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::voice::{SyntheticVoice, VoiceConfig};
use super::{EnvError, SpeakerProfile, VoiceModel};
use crate::embedding::{Embedding, TextFeatures};
use crate::error::DomainError;
use crate::rng::Rng;
use crate::scoring::{
    RewardWeights, ScoreContext, ScoreTriple, Scorer, ScorerFault, ScorerKind, ScorerSet,
    SpeechFeatures,
};
use crate::state::StateDims;

/// A voice space where similarity and quality pull in opposite directions.
///
/// With `x = w·e`: `sim = sigmoid(x)`, `mos = 5·exp(−max(0, x − τ))` and
/// `intell = 1 − exp(−max(0, x − τ))`. Pushing past `τ` keeps raising
/// similarity while quality and intelligibility degrade. Speech, voiceprints
/// and re-encoding are borrowed from a [`SyntheticVoice`] with the same seed so
/// every state segment is available.
#[derive(Debug, Clone)]
pub struct TradeoffVoice {
    inner: SyntheticVoice,
    direction: Arc<Vec<f64>>,
    tau: f64,
    spread: f64,
}

/// Builds a tradeoff environment with the default text dimension.
pub fn make_tradeoff_env(seed: u64, w: &[f64], tau: f64) -> Result<TradeoffVoice, DomainError> {
    TradeoffVoice::new(seed, 8, w, tau)
}

impl TradeoffVoice {
    pub fn new(seed: u64, d_t: usize, w: &[f64], tau: f64) -> Result<Self, DomainError> {
        if w.is_empty() {
            return Err(DomainError::Empty { what: "direction" });
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(DomainError::Invalid(format!(
                "direction must have unit length, got norm {norm}"
            )));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(DomainError::Invalid(format!(
                "threshold must be positive, got {tau}"
            )));
        }
        let inner = SyntheticVoice::new(
            VoiceConfig {
                d_e: w.len(),
                d_t,
                speaker_scale: 0.3,
                sigma_ref: 0.3,
                radius: Some(1.0),
                ..VoiceConfig::default()
            },
            seed,
        )?;
        Ok(Self {
            inner,
            direction: Arc::new(w.to_vec()),
            tau,
            spread: 0.5,
        })
    }

    /// A random unit direction in `d` dimensions.
    pub fn random_direction(rng: &mut Rng, d: usize) -> Vec<f64> {
        loop {
            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                return g.iter().map(|x| x / n).collect();
            }
        }
    }

    /// The voice model supplying speech, voiceprints and references.
    pub fn voice(&self) -> &SyntheticVoice {
        &self.inner
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn projection(&self, e: &Embedding) -> f64 {
        ArrayView1::from(self.direction.as_slice()).dot(&ArrayView1::from(e.as_slice()))
    }

    fn triple_at(&self, x: f64) -> Result<ScoreTriple, EnvError> {
        Ok(ScoreTriple::new(
            sigmoid(x),
            tradeoff_quality(x, self.tau),
            tradeoff_intelligibility(x, self.tau),
        )?)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn tradeoff_quality(x: f64, tau: f64) -> f64 {
    5.0 * (-(x - tau).max(0.0)).exp()
}

fn tradeoff_intelligibility(x: f64, tau: f64) -> f64 {
    1.0 - (-(x - tau).max(0.0)).exp()
}

impl VoiceModel for TradeoffVoice {
    fn dims(&self) -> StateDims {
        self.inner.dims()
    }

    fn speech_dim(&self) -> usize {
        self.inner.speech_dim()
    }

    fn calibration_text(&self) -> &TextFeatures {
        self.inner.calibration_text()
    }

    fn synth(&self, f_t: &TextFeatures, e: &Embedding) -> Result<SpeechFeatures, DomainError> {
        self.inner.synth(f_t, e)
    }

    fn voiceprint(&self, speech: &SpeechFeatures) -> Vec<f64> {
        self.inner.voiceprint(speech)
    }

    fn reencode(&self, speech: &SpeechFeatures) -> Embedding {
        self.inner.reencode(speech)
    }

    fn score_detail(
        &self,
        f_t: &TextFeatures,
        e: &Embedding,
        _target_voiceprint: &[f64],
    ) -> Result<(ScoreTriple, f64), EnvError> {
        let speech = self.inner.synth(f_t, e)?;
        let vp = self.inner.voiceprint(&speech);
        let vp_norm = vp.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok((self.triple_at(self.projection(e))?, vp_norm))
    }

    fn voiceprint_lipschitz(&self) -> f64 {
        self.inner.voiceprint_lipschitz()
    }

    fn lipschitz(&self, weights: &RewardWeights, _min_voiceprint_norm: f64) -> f64 {
        let mos = if weights.enable_mos { weights.lambda1 } else { 0.0 };
        let intell = if weights.enable_intell {
            weights.lambda2
        } else {
            0.0
        };
        0.25 + mos + intell
    }

    /// True embeddings sit on the threshold (`w·e* = τ`); references scatter
    /// around them on both sides.
    fn sample_speaker(&self, rng: &mut Rng, id: u64, k: usize) -> SpeakerProfile {
        let w = Array1::from(self.direction.to_vec());
        let g: Array1<f64> =
            Array1::from_shape_fn(w.len(), |_| self.spread * rng.sample::<f64, _>(StandardNormal));
        let orth = &g - &(&w * w.dot(&g));
        let e = &w * self.tau + &orth;
        let e_star = Embedding::new(e.to_vec()).expect("finite by construction");
        self.inner.profile_for(rng, id, e_star, k)
    }

    fn scorers(&self) -> ScorerSet {
        let make = |kind| -> Arc<dyn Scorer> {
            Arc::new(TradeoffScorer {
                direction: Arc::clone(&self.direction),
                tau: self.tau,
                kind,
            })
        };
        ScorerSet::new(
            make(ScorerKind::Sim),
            make(ScorerKind::Mos),
            make(ScorerKind::Intell),
        )
    }
}

/// The tradeoff formulas as stand-alone scorers (they read the embedding from the context).
#[derive(Debug, Clone)]
pub struct TradeoffScorer {
    direction: Arc<Vec<f64>>,
    tau: f64,
    kind: ScorerKind,
}

impl Scorer for TradeoffScorer {
    fn kind(&self) -> ScorerKind {
        self.kind
    }

    fn score(&self, _speech: &SpeechFeatures, ctx: &ScoreContext<'_>) -> Result<f64, ScorerFault> {
        let e = ctx
            .embedding
            .ok_or(ScorerFault::MissingContext("the source embedding"))?;
        if e.dim() != self.direction.len() {
            return Err(ScorerFault::BadInput(format!(
                "embedding length {} does not match direction length {}",
                e.dim(),
                self.direction.len()
            )));
        }
        let x = ArrayView1::from(self.direction.as_slice()).dot(&ArrayView1::from(e.as_slice()));
        Ok(match self.kind {
            ScorerKind::Sim => sigmoid(x),
            ScorerKind::Mos => tradeoff_quality(x, self.tau),
            ScorerKind::Intell => tradeoff_intelligibility(x, self.tau),
        })
    }
}
