use serde::{Deserialize, Serialize};

use crate::action::weighted_combination;
use crate::error::{check_finite, DomainError};

/// A speaker embedding: a fixed-length vector of finite latent coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.is_empty() {
            return Err(DomainError::Empty { what: "embedding" });
        }
        check_finite("embedding", &values)?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = DomainError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Text features of one utterance (a stand-in for a pretrained text encoder's output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TextFeatures(Vec<f64>);

impl TextFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.is_empty() {
            return Err(DomainError::Empty {
                what: "text features",
            });
        }
        check_finite("text features", &values)?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for TextFeatures {
    type Error = DomainError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<TextFeatures> for Vec<f64> {
    fn from(t: TextFeatures) -> Self {
        t.0
    }
}

/// Componentwise mean of the reference embeddings.
///
/// Shares its summation path with [`crate::fuse_fs`], so the mean is
/// bit-identical to a fusion with equal logits.
pub fn mean_init(refs: &[Embedding]) -> Result<Embedding, DomainError> {
    check_refs(refs)?;
    let weights = vec![1.0 / refs.len() as f64; refs.len()];
    Ok(weighted_combination(refs, &weights))
}

pub(crate) fn check_refs(refs: &[Embedding]) -> Result<usize, DomainError> {
    let first = refs.first().ok_or(DomainError::Empty {
        what: "reference embeddings",
    })?;
    let dim = first.dim();
    for (i, r) in refs.iter().enumerate() {
        if r.dim() != dim {
            return Err(DomainError::DimensionMismatch {
                segment: format!("refs[{i}]"),
                expected: dim,
                actual: r.dim(),
            });
        }
    }
    Ok(dim)
}
