use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_refs, Embedding};
use crate::error::{check_finite, DomainError};

/// What the policy emits each step.
///
/// `Ss` refines the current embedding additively; `Fs` re-weights the
/// reference embeddings through a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Ss { delta: Vec<f64> },
    Fs { logits: Vec<f64> },
}

impl Action {
    pub fn values(&self) -> &[f64] {
        match self {
            Action::Ss { delta } => delta,
            Action::Fs { logits } => logits,
        }
    }

    pub fn scenario_name(&self) -> &'static str {
        match self {
            Action::Ss { .. } => "ss",
            Action::Fs { .. } => "fs",
        }
    }
}

/// Applies an additive refinement: `e'_i = e_i + scale * delta_i`.
pub fn apply_ss(e: &Embedding, delta: &[f64], action_scale: f64) -> Result<Embedding, DomainError> {
    if !(action_scale.is_finite() && action_scale > 0.0) {
        return Err(DomainError::BadScale(action_scale));
    }
    if delta.len() != e.dim() {
        return Err(DomainError::DimensionMismatch {
            segment: "delta".into(),
            expected: e.dim(),
            actual: delta.len(),
        });
    }
    check_finite("delta", delta)?;
    if let Some(index) = delta.iter().position(|d| d.abs() > 1.0) {
        return Err(DomainError::DeltaOutOfRange {
            index,
            value: delta[index],
        });
    }
    let values = e
        .as_slice()
        .iter()
        .zip(delta)
        .map(|(x, d)| x + action_scale * d)
        .collect();
    Embedding::new(values)
}

/// Result of fusing reference embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    /// Softmax of the logits; on the probability simplex.
    pub weights: Vec<f64>,
    pub embedding: Embedding,
}

/// Fuses `refs` with weights `softmax(logits)`.
///
/// Sums are accumulated in a canonical order (by weight, then by reference
/// coordinates), so permuting `refs` and `logits` together reproduces the
/// same bits.
pub fn fuse_fs(refs: &[Embedding], logits: &[f64]) -> Result<Fusion, DomainError> {
    check_refs(refs)?;
    if logits.len() != refs.len() {
        return Err(DomainError::DimensionMismatch {
            segment: "logits".into(),
            expected: refs.len(),
            actual: logits.len(),
        });
    }
    check_finite("logits", logits)?;
    let weights = softmax(logits);
    let embedding = weighted_combination(refs, &weights);
    Ok(Fusion { weights, embedding })
}

/// Numerically stable softmax with an order-independent normalizer.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let mut sorted = exps.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    exps.into_iter().map(|x| x / total).collect()
}

pub(crate) fn weighted_combination(refs: &[Embedding], weights: &[f64]) -> Embedding {
    let dim = refs[0].dim();
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a].total_cmp(&weights[b]).then_with(|| {
            refs[a]
                .as_slice()
                .iter()
                .zip(refs[b].as_slice())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    let mut acc = vec![0.0; dim];
    for &i in &order {
        for (a, r) in acc.iter_mut().zip(refs[i].as_slice()) {
            *a += weights[i] * r;
        }
    }
    Embedding::new(acc).expect("convex combination of finite vectors is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::mean_init;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ss_direct_arithmetic() {
        let e = apply_ss(&emb(&[0.1, 0.2]), &[1.0, -1.0], 0.001).unwrap();
        assert!((e.as_slice()[0] - 0.101).abs() < 1e-15);
        assert!((e.as_slice()[1] - 0.199).abs() < 1e-15);
    }

    #[test]
    fn ss_zero_delta_is_identity() {
        let e0 = emb(&[0.3, -0.7, 1e-9]);
        assert_eq!(apply_ss(&e0, &[0.0; 3], 0.001).unwrap(), e0);
    }

    #[test]
    fn ss_rejects_bad_input() {
        let e0 = emb(&[0.0, 0.0]);
        assert!(apply_ss(&e0, &[f64::NAN, 0.0], 0.001).is_err());
        assert!(matches!(
            apply_ss(&e0, &[1.5, 0.0], 0.001),
            Err(DomainError::DeltaOutOfRange { index: 0, .. })
        ));
        assert!(apply_ss(&e0, &[0.0, 0.0], 0.0).is_err());
        assert!(apply_ss(&e0, &[0.0], 0.001).is_err());
    }

    #[test]
    fn fs_singleton_is_identity() {
        let r = emb(&[0.25, -3.0]);
        for logit in [-40.0, 0.0, 3.3, 700.0] {
            let f = fuse_fs(std::slice::from_ref(&r), &[logit]).unwrap();
            assert_eq!(f.weights, vec![1.0]);
            assert_eq!(f.embedding, r);
        }
    }

    #[test]
    fn fs_uniform_is_mean() {
        let refs = [emb(&[1.0, 0.0]), emb(&[0.0, 1.0]), emb(&[1.0, 1.0])];
        let f = fuse_fs(&refs, &[0.7, 0.7, 0.7]).unwrap();
        assert!((f.embedding.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.embedding.as_slice()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.embedding, mean_init(&refs).unwrap());
    }

    #[test]
    fn fs_hand_softmax() {
        // exp(ln 2) / (exp(ln 2) + exp(0)) = 2/3
        let refs = [emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let f = fuse_fs(&refs, &[2f64.ln(), 0.0]).unwrap();
        assert!((f.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.weights[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.embedding.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.embedding.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fs_errors() {
        assert!(fuse_fs(&[], &[]).is_err());
        assert!(fuse_fs(&[emb(&[1.0]), emb(&[1.0, 2.0])], &[0.0, 0.0]).is_err());
        assert!(fuse_fs(&[emb(&[1.0])], &[0.0, 0.0]).is_err());
    }

    fn refs_and_logits() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..6, 1usize..5).prop_flat_map(|(k, d)| {
            (
                prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), k),
                prop::collection::vec(-8.0f64..8.0, k),
            )
        })
    }

    proptest! {
        #[test]
        fn fs_permutation_equivariant((refs, logits) in refs_and_logits(), seed in any::<u64>()) {
            let refs: Vec<Embedding> = refs.into_iter().map(|r| Embedding::new(r).unwrap()).collect();
            let mut perm: Vec<usize> = (0..refs.len()).collect();
            // Fisher-Yates driven by the proptest seed.
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let prefs: Vec<Embedding> = perm.iter().map(|&i| refs[i].clone()).collect();
            let plogits: Vec<f64> = perm.iter().map(|&i| logits[i]).collect();
            let a = fuse_fs(&refs, &logits).unwrap();
            let b = fuse_fs(&prefs, &plogits).unwrap();
            prop_assert_eq!(a.embedding, b.embedding);
        }

        #[test]
        fn fs_convex((refs, logits) in refs_and_logits()) {
            let refs: Vec<Embedding> = refs.into_iter().map(|r| Embedding::new(r).unwrap()).collect();
            let f = fuse_fs(&refs, &logits).unwrap();
            let sum: f64 = f.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(f.weights.iter().all(|w| *w >= 0.0));
            for j in 0..refs[0].dim() {
                let lo = refs.iter().map(|r| r.as_slice()[j]).fold(f64::INFINITY, f64::min);
                let hi = refs.iter().map(|r| r.as_slice()[j]).fold(f64::NEG_INFINITY, f64::max);
                let x = f.embedding.as_slice()[j];
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12, "{} not in [{}, {}]", x, lo, hi);
            }
        }

        #[test]
        fn fs_logit_shift_invariant((refs, logits) in refs_and_logits(), c in -50.0f64..50.0) {
            let refs: Vec<Embedding> = refs.into_iter().map(|r| Embedding::new(r).unwrap()).collect();
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            let a = fuse_fs(&refs, &logits).unwrap();
            let b = fuse_fs(&refs, &shifted).unwrap();
            prop_assert!(a.embedding.max_abs_diff(&b.embedding) <= 1e-12);
        }

        #[test]
        fn ss_linear_when_in_bounds(
            e in prop::collection::vec(-1.0f64..1.0, 4),
            d1 in prop::collection::vec(-0.5f64..0.5, 4),
            d2 in prop::collection::vec(-0.5f64..0.5, 4),
            scale in 1e-4f64..1.0,
        ) {
            let e = Embedding::new(e).unwrap();
            let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
            let out = apply_ss(&e, &sum, scale).unwrap();
            for i in 0..4 {
                let expected = e.as_slice()[i] + scale * (d1[i] + d2[i]);
                prop_assert_eq!(out.as_slice()[i], expected);
            }
            prop_assert!(out.max_abs_diff(&e) <= scale * (1.0 + 1e-12));
        }

        #[test]
        fn mean_matches_zero_logit_fusion(refs in (1usize..6, 1usize..5).prop_flat_map(|(k, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), k))) {
            let refs: Vec<Embedding> = refs.into_iter().map(|r| Embedding::new(r).unwrap()).collect();
            let zeros = vec![0.0; refs.len()];
            prop_assert_eq!(mean_init(&refs).unwrap(), fuse_fs(&refs, &zeros).unwrap().embedding);
        }
    }
}
