use serde::{Deserialize, Serialize};

use super::{EnvError, VoiceModel};
use crate::embedding::{Embedding, TextFeatures};
use crate::error::DomainError;
use crate::scoring::{fuse_scores, RewardWeights, ScoreTriple};

/// Largest grid the oracle will enumerate.
pub const MAX_GRID_POINTS: u128 = 10_000_000;

/// An axis-aligned lattice: `points[i]` evenly spaced values from `lo[i]` to `hi[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    /// `[lo : step : hi]` in every one of `d` dimensions.
    pub fn cube(d: usize, lo: f64, hi: f64, step: f64) -> Self {
        let n = ((hi - lo) / step).round() as usize + 1;
        Self {
            lo: vec![lo; d],
            hi: vec![hi; d],
            points: vec![n; d],
        }
    }

    /// A cube of half-width `half_width` centred on `centre`, `n` points per axis.
    pub fn around(centre: &[f64], half_width: f64, n: usize) -> Self {
        Self {
            lo: centre.iter().map(|c| c - half_width).collect(),
            hi: centre.iter().map(|c| c + half_width).collect(),
            points: vec![n; centre.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    /// Number of lattice points, or `None` on overflow.
    pub fn size(&self) -> Option<u128> {
        self.points
            .iter()
            .try_fold(1u128, |acc, &n| acc.checked_mul(n as u128))
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let n = self.points[axis];
        if n <= 1 {
            0.0
        } else {
            (self.hi[axis] - self.lo[axis]) / (n - 1) as f64
        }
    }

    pub fn value(&self, axis: usize, index: usize) -> f64 {
        if index + 1 == self.points[axis] && self.points[axis] > 1 {
            self.hi[axis]
        } else {
            self.lo[axis] + index as f64 * self.spacing(axis)
        }
    }

    /// Half the diagonal of one cell: the farthest any point of the box is from its nearest node.
    pub fn half_cell_diagonal(&self) -> f64 {
        0.5 * (0..self.dim())
            .map(|a| self.spacing(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn validate(&self) -> Result<u128, EnvError> {
        if self.lo.len() != self.points.len() || self.hi.len() != self.points.len() {
            return Err(DomainError::Invalid("grid bounds and point counts differ in length".into()).into());
        }
        if self.points.is_empty() || self.points.contains(&0) {
            return Err(EnvError::EmptyGrid);
        }
        for a in 0..self.dim() {
            let (lo, hi) = (self.lo[a], self.hi[a]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DomainError::Invalid(format!("grid axis {a}: bad bounds [{lo}, {hi}]")).into());
            }
        }
        match self.size() {
            Some(n) if n <= MAX_GRID_POINTS => Ok(n),
            size => Err(EnvError::GridTooLarge {
                size: size.unwrap_or(u128::MAX),
                limit: MAX_GRID_POINTS,
            }),
        }
    }
}

/// Result of an exhaustive grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub embedding: Embedding,
    pub score: ScoreTriple,
    pub fused: f64,
    /// Largest amount any off-grid point of the box can beat `fused` by.
    pub slack: f64,
    pub evaluated: u128,
}

/// Exhaustive argmax of the fused score over a grid of embeddings.
///
/// Points are visited in lexicographic order and the incumbent is replaced
/// only by a strictly better score, so ties resolve to the lexicographically
/// smallest embedding.
pub fn oracle_best(
    model: &dyn VoiceModel,
    weights: &RewardWeights,
    f_t: &TextFeatures,
    target_voiceprint: &[f64],
    grid: &GridSpec,
) -> Result<OracleResult, EnvError> {
    let size = grid.validate()?;
    let d = grid.dim();
    if d != model.dims().d_e {
        return Err(DomainError::DimensionMismatch {
            segment: "grid".into(),
            expected: model.dims().d_e,
            actual: d,
        }
        .into());
    }
    let mut index = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut best: Option<(Embedding, ScoreTriple, f64)> = None;
    let mut min_vp = f64::INFINITY;
    loop {
        for a in 0..d {
            point[a] = grid.value(a, index[a]);
        }
        let e = Embedding::new(point.clone())?;
        let (score, vp_norm) = model.score_detail(f_t, &e, target_voiceprint)?;
        min_vp = min_vp.min(vp_norm);
        let fused = fuse_scores(&score, weights);
        if best.as_ref().is_none_or(|(_, _, f)| fused > *f) {
            best = Some((e, score, fused));
        }
        // Odometer increment, last axis fastest.
        let mut a = d;
        loop {
            if a == 0 {
                let (embedding, score, fused) = best.expect("grid is non-empty");
                let half = grid.half_cell_diagonal();
                let slack = if half == 0.0 {
                    0.0
                } else {
                    // The voiceprint norm can shrink by at most its Lipschitz
                    // bound times the distance to the nearest node.
                    let floor = min_vp - model.voiceprint_lipschitz() * half;
                    if floor > 0.0 {
                        model.lipschitz(weights, floor) * half
                    } else {
                        f64::INFINITY
                    }
                };
                return Ok(OracleResult {
                    embedding,
                    score,
                    fused,
                    slack,
                    evaluated: size,
                });
            }
            a -= 1;
            index[a] += 1;
            if index[a] < grid.points[a] {
                break;
            }
            index[a] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::voice::{SyntheticVoice, VoiceConfig};

    fn one_dim() -> SyntheticVoice {
        SyntheticVoice::new(
            VoiceConfig {
                d_e: 1,
                speaker_scale: 0.5,
                radius: Some(1.0),
                ..VoiceConfig::default()
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn grid_arithmetic() {
        let g = GridSpec::cube(1, -1.0, 1.0, 0.01);
        assert_eq!(g.points, vec![201]);
        assert_eq!(g.value(0, 0), -1.0);
        assert_eq!(g.value(0, 200), 1.0);
        assert!((g.value(0, 130) - 0.3).abs() < 1e-12);
        assert_eq!(GridSpec::cube(3, 0.0, 1.0, 0.5).size(), Some(27));
    }

    #[test]
    fn empty_and_oversized_grids_are_rejected() {
        let m = one_dim();
        let w = RewardWeights::default();
        let p = m.calibration_text().clone();
        let empty = GridSpec {
            lo: vec![0.0],
            hi: vec![1.0],
            points: vec![0],
        };
        assert!(matches!(
            oracle_best(&m, &w, &p, &[0.0; 8], &empty),
            Err(EnvError::EmptyGrid)
        ));
        let big = GridSpec {
            lo: vec![0.0],
            hi: vec![1.0],
            points: vec![10_000_001],
        };
        match oracle_best(&m, &w, &p, &[0.0; 8], &big) {
            Err(EnvError::GridTooLarge { size, .. }) => assert_eq!(size, 10_000_001),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recovers_interior_optimum_in_one_dimension() {
        let m = one_dim();
        let e_star = Embedding::new(vec![0.3]).unwrap();
        let target = m.target_voiceprint(&e_star);
        let grid = GridSpec::cube(1, -1.0, 1.0, 0.01);
        let r = oracle_best(&m, &RewardWeights::default(), m.calibration_text(), &target, &grid).unwrap();
        assert!((r.embedding.as_slice()[0] - 0.3).abs() <= 0.01 + 1e-12, "{:?}", r.embedding);
        assert_eq!(r.evaluated, 201);
        assert!(r.slack.is_finite());
    }

    #[test]
    fn ties_go_to_smallest_point() {
        // With everything disabled but a constant similarity the whole grid ties.
        let m = crate::env::tradeoff::make_tradeoff_env(1, &[1.0, 0.0], 0.5).unwrap();
        let grid = GridSpec {
            lo: vec![0.0, -1.0],
            hi: vec![0.0, 1.0],
            points: vec![1, 5],
        };
        let r = oracle_best(&m, &RewardWeights::default(), m.calibration_text(), &[0.0; 8], &grid).unwrap();
        assert_eq!(r.embedding.as_slice(), &[0.0, -1.0]);
    }
}
