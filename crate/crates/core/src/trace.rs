use crate::action::Action;
use crate::embedding::Embedding;
use crate::error::DomainError;
use crate::scoring::ScoreTriple;
use crate::state::StateVector;

/// One transition, recorded for training and audit.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// State the action was taken in.
    pub state: StateVector,
    pub action: Action,
    /// Embedding after the action was applied.
    pub embedding: Embedding,
    pub score: ScoreTriple,
    pub fused: f64,
    pub reward: f64,
    pub done: bool,
}

/// A complete episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub initial_embedding: Embedding,
    pub initial_score: ScoreTriple,
    pub initial_fused: f64,
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn final_fused(&self) -> f64 {
        self.steps.last().map_or(self.initial_fused, |s| s.fused)
    }

    pub fn final_score(&self) -> ScoreTriple {
        self.steps.last().map_or(self.initial_score, |s| s.score)
    }

    pub fn final_embedding(&self) -> &Embedding {
        self.steps
            .last()
            .map_or(&self.initial_embedding, |s| &s.embedding)
    }

    /// Largest per-step `‖e_{n+1} − e_n‖∞` along the episode.
    pub fn max_step_movement(&self) -> f64 {
        let mut prev = &self.initial_embedding;
        let mut worst: f64 = 0.0;
        for s in &self.steps {
            worst = worst.max(s.embedding.max_abs_diff(prev));
            prev = &s.embedding;
        }
        worst
    }

    /// Checks that exactly the last step is terminal and that rewards telescope.
    pub fn check(&self, tolerance: f64) -> Result<(), DomainError> {
        let n = self.steps.len();
        if n == 0 {
            return Err(DomainError::Invalid("episode has no steps".into()));
        }
        if let Some(i) = self.steps[..n - 1].iter().position(|s| s.done) {
            return Err(DomainError::Invalid(format!(
                "step {i} is marked done before the last step"
            )));
        }
        if !self.steps[n - 1].done {
            return Err(DomainError::Invalid("last step is not marked done".into()));
        }
        let gap = self.total_reward() - (self.final_fused() - self.initial_fused);
        if gap.abs() > tolerance {
            return Err(DomainError::Invalid(format!(
                "rewards do not telescope: off by {gap:e}"
            )));
        }
        Ok(())
    }
}
