use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use super::{check_range, ScoreError, ScoreTriple, ScorerFault, ScorerKind, SpeechFeatures};
use crate::embedding::Embedding;

/// Side information a scorer may need besides the speech itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreContext<'a> {
    /// Voiceprint of the reference speech (similarity scorers).
    pub target_voiceprint: Option<&'a [f64]>,
    /// Identifier of the text that was synthesized (intelligibility scorers).
    pub text_id: Option<u64>,
    /// Embedding the speech was synthesized from. Only synthetic scorers read it.
    pub embedding: Option<&'a Embedding>,
}

/// A single-quantity scorer. Implementations must be deterministic and reentrant.
pub trait Scorer: Send + Sync {
    fn kind(&self) -> ScorerKind;

    fn score(&self, speech: &SpeechFeatures, ctx: &ScoreContext<'_>) -> Result<f64, ScorerFault>;
}

/// Runs a scorer and validates its output against the declared range.
pub fn score_speech(
    scorer: &dyn Scorer,
    speech: &SpeechFeatures,
    ctx: &ScoreContext<'_>,
) -> Result<f64, ScoreError> {
    let value = scorer.score(speech, ctx)?;
    check_range(scorer.kind(), value)
}

/// Cosine similarity; zero-norm inputs are treated as orthogonal (0).
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na2 = a.dot(&a);
    let nb2 = b.dot(&b);
    if na2 == 0.0 || nb2 == 0.0 {
        log::warn!("zero-norm voiceprint, similarity defaults to orthogonal");
        return 0.0;
    }
    // sqrt(x·x) is exact, so identical inputs give exactly 1.
    (a.dot(&b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0)
}

/// `(1 + cos(V·s, target)) / 2`.
#[derive(Debug, Clone)]
pub struct VoiceprintSimilarity {
    projection: Arc<Array2<f64>>,
}

impl VoiceprintSimilarity {
    pub fn new(projection: Arc<Array2<f64>>) -> Self {
        Self { projection }
    }
}

impl Scorer for VoiceprintSimilarity {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Sim
    }

    fn score(&self, speech: &SpeechFeatures, ctx: &ScoreContext<'_>) -> Result<f64, ScorerFault> {
        let target = ctx
            .target_voiceprint
            .ok_or(ScorerFault::MissingContext("a target voiceprint"))?;
        if speech.dim() != self.projection.ncols() || target.len() != self.projection.nrows() {
            return Err(ScorerFault::BadInput(format!(
                "speech length {} / target length {} do not fit a {}x{} projection",
                speech.dim(),
                target.len(),
                self.projection.nrows(),
                self.projection.ncols()
            )));
        }
        let vp = self.projection.dot(&ArrayView1::from(speech.as_slice()));
        let cos = cosine_similarity(vp.view(), ArrayView1::from(target));
        Ok((1.0 + cos) / 2.0)
    }
}

/// `5·exp(−decay·max(0, ‖e‖ − radius))`: full quality inside a norm shell.
#[derive(Debug, Clone, Copy)]
pub struct QualityShell {
    pub radius: f64,
    pub decay: f64,
}

impl Scorer for QualityShell {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Mos
    }

    fn score(&self, _speech: &SpeechFeatures, ctx: &ScoreContext<'_>) -> Result<f64, ScorerFault> {
        let e = ctx
            .embedding
            .ok_or(ScorerFault::MissingContext("the source embedding"))?;
        Ok(5.0 * (-self.decay * (e.norm() - self.radius).max(0.0)).exp())
    }
}

/// `1 − exp(−decay·max(0, ‖e‖ − radius))`: error rate grows outside a norm shell.
#[derive(Debug, Clone, Copy)]
pub struct IntelligibilityShell {
    pub radius: f64,
    pub decay: f64,
}

impl Scorer for IntelligibilityShell {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Intell
    }

    fn score(&self, _speech: &SpeechFeatures, ctx: &ScoreContext<'_>) -> Result<f64, ScorerFault> {
        let e = ctx
            .embedding
            .ok_or(ScorerFault::MissingContext("the source embedding"))?;
        Ok(1.0 - (-self.decay * (e.norm() - self.radius).max(0.0)).exp())
    }
}

/// One scorer per quantity.
#[derive(Clone)]
pub struct ScorerSet {
    pub sim: Arc<dyn Scorer>,
    pub mos: Arc<dyn Scorer>,
    pub intell: Arc<dyn Scorer>,
}

impl ScorerSet {
    pub fn new(sim: Arc<dyn Scorer>, mos: Arc<dyn Scorer>, intell: Arc<dyn Scorer>) -> Self {
        Self { sim, mos, intell }
    }

    /// Scores one synthesis with all three scorers.
    pub fn score(
        &self,
        speech: &SpeechFeatures,
        ctx: &ScoreContext<'_>,
    ) -> Result<ScoreTriple, ScoreError> {
        for (scorer, kind) in [
            (&self.sim, ScorerKind::Sim),
            (&self.mos, ScorerKind::Mos),
            (&self.intell, ScorerKind::Intell),
        ] {
            if scorer.kind() != kind {
                return Err(ScorerFault::BadInput(format!(
                    "{} scorer installed in the {kind} slot",
                    scorer.kind()
                ))
                .into());
            }
        }
        ScoreTriple::new(
            score_speech(self.sim.as_ref(), speech, ctx)?,
            score_speech(self.mos.as_ref(), speech, ctx)?,
            score_speech(self.intell.as_ref(), speech, ctx)?,
        )
    }
}

impl std::fmt::Debug for ScorerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScorerSet").finish_non_exhaustive()
    }
}
