//! Embedding-space gradient ascent, the stand-in for fine-tuning the synthesizer.

use asrrl_core::env::VoiceModel;
use asrrl_core::scoring::{fuse_scores, RewardWeights, ScoreTriple};
use asrrl_core::{Embedding, TextFeatures};

use crate::error::{HarnessError, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    /// Best embedding seen along the trajectory (the start if nothing beat it).
    pub embedding: Embedding,
    pub score: ScoreTriple,
    pub fused: f64,
    pub initial_fused: f64,
    /// Step at which the best embedding was reached (0 = start).
    pub best_step: usize,
}

pub fn finetune_proxy(
    model: &dyn VoiceModel,
    weights: &RewardWeights,
    f_t: &TextFeatures,
    target: &[f64],
    start: &Embedding,
    steps: usize,
    step_size: f64,
) -> Result<FinetuneResult> {
    if steps == 0 {
        return Err(HarnessError::Config("fine-tuning needs at least one step".into()));
    }
    if !(step_size.is_finite() && step_size >= 0.0) {
        return Err(HarnessError::Config(format!(
            "step size must be non-negative, got {step_size}"
        )));
    }
    let fused = |e: &[f64]| -> Result<(ScoreTriple, f64)> {
        let e = Embedding::new(e.to_vec())?;
        let t = model.score_state(f_t, &e, target)?;
        Ok((t, fuse_scores(&t, weights)))
    };
    let mut e = start.as_slice().to_vec();
    let (score0, f0) = fused(&e)?;
    let mut best = (e.clone(), score0, f0, 0);
    let mut grad = vec![0.0; e.len()];
    let mut probe = e.clone();
    for step in 1..=steps {
        for i in 0..e.len() {
            probe[i] = e[i] + FD_STEP;
            let up = fused(&probe)?.1;
            probe[i] = e[i] - FD_STEP;
            let down = fused(&probe)?.1;
            probe[i] = e[i];
            grad[i] = (up - down) / (2.0 * FD_STEP);
            if !grad[i].is_finite() {
                return Err(HarnessError::NonFiniteGradient {
                    coordinate: i,
                    step,
                });
            }
        }
        for (x, g) in e.iter_mut().zip(&grad) {
            *x += step_size * g;
        }
        probe.copy_from_slice(&e);
        let (score, f) = fused(&e)?;
        if f > best.2 {
            best = (e.clone(), score, f, step);
        }
    }
    Ok(FinetuneResult {
        embedding: Embedding::new(best.0)?,
        score: best.1,
        fused: best.2,
        initial_fused: f0,
        best_step: best.3,
    })
}
