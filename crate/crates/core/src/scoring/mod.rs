//! Fused scoring, delta rewards and scorer plug-ins.

pub mod external;
mod scorer;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{check_finite, DomainError};

pub use scorer::{
    cosine_similarity, score_speech, IntelligibilityShell, QualityShell, ScoreContext, Scorer,
    ScorerSet, VoiceprintSimilarity,
};

/// Which quantity a scorer produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Sim,
    Mos,
    Intell,
}

impl ScorerKind {
    /// Closed range every score of this kind must fall in.
    pub fn range(self) -> (f64, f64) {
        match self {
            ScorerKind::Sim | ScorerKind::Intell => (0.0, 1.0),
            ScorerKind::Mos => (0.0, 5.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::Sim => "sim",
            ScorerKind::Mos => "mos",
            ScorerKind::Intell => "intell",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scorer could not produce a score at all.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerFault {
    #[error("scorer timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("scorer protocol violation: {0}")]
    Protocol(String),
    #[error("scorer reported an error: {0}")]
    Remote(String),
    #[error("scorer connection lost: {0}")]
    Disconnected(String),
    #[error("scorer needs {0} in its context")]
    MissingContext(&'static str),
    #[error("scorer input invalid: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Fault(#[from] ScorerFault),
    /// A score was produced but it is outside the declared range.
    #[error("{kind} score {value} outside [{lo}, {hi}]")]
    OutOfRange {
        kind: ScorerKind,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Similarity, quality and intelligibility scores of one synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    sim: f64,
    mos: f64,
    intell: f64,
}

impl ScoreTriple {
    /// Validates each component against its closed range.
    pub fn new(sim: f64, mos: f64, intell: f64) -> Result<Self, ScoreError> {
        for (kind, value) in [
            (ScorerKind::Sim, sim),
            (ScorerKind::Mos, mos),
            (ScorerKind::Intell, intell),
        ] {
            check_range(kind, value)?;
        }
        Ok(Self { sim, mos, intell })
    }

    pub fn sim(&self) -> f64 {
        self.sim
    }

    pub fn mos(&self) -> f64 {
        self.mos
    }

    pub fn intell(&self) -> f64 {
        self.intell
    }
}

pub(crate) fn check_range(kind: ScorerKind, value: f64) -> Result<f64, ScoreError> {
    let (lo, hi) = kind.range();
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(ScoreError::OutOfRange {
            kind,
            value,
            lo,
            hi,
        })
    }
}

/// Weights of the fused score plus per-term ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub enable_mos: bool,
    pub enable_intell: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.1,
            enable_mos: true,
            enable_intell: true,
        }
    }
}

impl RewardWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..Self::default()
        }
    }

    /// Similarity only (both penalty terms switched off).
    pub fn sim_only() -> Self {
        Self {
            enable_mos: false,
            enable_intell: false,
            ..Self::default()
        }
    }

    /// Ablation tag, e.g. `sim+mos+intell`.
    pub fn tag(&self) -> String {
        let mut parts = vec!["sim"];
        if self.enable_mos {
            parts.push("mos");
        }
        if self.enable_intell {
            parts.push("intell");
        }
        parts.join("+")
    }
}

/// `sc = sim + λ1·(mos/5) − λ2·intell`, with disabled terms contributing zero.
pub fn fuse_scores(t: &ScoreTriple, w: &RewardWeights) -> f64 {
    let quality = if w.enable_mos {
        w.lambda1 * (t.mos / 5.0)
    } else {
        0.0
    };
    let penalty = if w.enable_intell {
        w.lambda2 * t.intell
    } else {
        0.0
    };
    t.sim + quality - penalty
}

/// Delta reward `r_n = sc_n − sc_{n−1}`.
pub fn step_reward(sc_n: f64, sc_prev: f64) -> Result<f64, DomainError> {
    check_finite("fused score", &[sc_n, sc_prev])?;
    Ok(sc_n - sc_prev)
}

/// Synthesized speech, represented by a feature vector rather than audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechFeatures(Vec<f64>);

impl SpeechFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.is_empty() {
            return Err(DomainError::Empty {
                what: "speech features",
            });
        }
        check_finite("speech features", &values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}
