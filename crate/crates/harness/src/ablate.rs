//! Score-term and state-segment ablations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use asrrl_core::scoring::{fuse_scores, RewardWeights, ScoreTriple};
use asrrl_core::SegmentMask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EnvKind};
use crate::error::{HarnessError, Result};
use crate::records::{Moments, Variant};
use crate::run::{evaluate, train, Experiment};
use crate::settings::ExperimentSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    ScoreTerms,
    StateSegments,
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::ScoreTerms => "score_terms",
            AblationMode::StateSegments => "state_segments",
        })
    }
}

impl FromStr for AblationMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score_terms" => Ok(AblationMode::ScoreTerms),
            "state_segments" => Ok(AblationMode::StateSegments),
            other => Err(HarnessError::Config(format!(
                "unknown ablation mode {other:?} (expected score_terms or state_segments)"
            ))),
        }
    }
}

/// One held-out speaker under one ablation variant, averaged over its texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub run_id: String,
    pub mode: AblationMode,
    /// Enabled reward terms (`sim+mos+intell`) or state segments (`f_t+e+e_s`).
    pub variant: String,
    pub seed: u64,
    pub speaker: u64,
    pub sim: f64,
    pub mos: f64,
    pub intell: f64,
    /// Fused score under the full default weights, whatever the training reward was.
    pub fused: f64,
}

/// The four reward variants: both terms, intelligibility only, quality only, neither.
pub fn score_term_variants(spec: &ExperimentSpec) -> Vec<(String, ExperimentSpec)> {
    [(true, true), (false, true), (true, false), (false, false)]
        .into_iter()
        .map(|(mos, intell)| {
            let mut s = spec.clone();
            s.enable_mos = mos;
            s.enable_intell = intell;
            let tag = s.weights().tag();
            s.run_id = format!("{}-{tag}", spec.run_id);
            (tag, s)
        })
        .collect()
}

/// The 4×4 grid of prior subsets of `{f_rv, f_t}` and posterior subsets of `{e_s, f_sv}`.
pub fn segment_variants(spec: &ExperimentSpec) -> Vec<(String, ExperimentSpec)> {
    let subsets = [(false, false), (true, false), (false, true), (true, true)];
    let mut out = Vec::new();
    for (f_rv, f_t) in subsets {
        for (e_s, f_sv) in subsets {
            let mut s = spec.clone();
            s.mask = SegmentMask {
                text: f_t,
                prior_voiceprint: f_rv,
                posterior_embedding: e_s,
                posterior_voiceprint: f_sv,
            };
            let tag = s.mask.tag();
            s.run_id = format!("{}-{tag}", spec.run_id);
            out.push((tag, s));
        }
    }
    out
}

/// Trains and evaluates every variant of `mode`.
pub fn ablate(spec: &ExperimentSpec, corpus: Arc<Corpus>, mode: AblationMode) -> Result<Vec<AblationRow>> {
    if mode == AblationMode::ScoreTerms && corpus.spec.env != EnvKind::Tradeoff {
        return Err(HarnessError::Config(
            "the score-term ablation runs on a tradeoff corpus (env = tradeoff)".into(),
        ));
    }
    let variants = match mode {
        AblationMode::ScoreTerms => score_term_variants(spec),
        AblationMode::StateSegments => segment_variants(spec),
    };
    let full = RewardWeights::new(spec.rl.lambda1, spec.rl.lambda2);
    let per_variant: Vec<Vec<AblationRow>> = variants
        .into_par_iter()
        .map(|(tag, s)| {
            let exp = Experiment::new(s, Arc::clone(&corpus))?;
            let outcome = train(&exp)?;
            let rows = evaluate(&exp, Some(outcome.policy()), &[Variant::Rl])?;
            let mut out = Vec::new();
            for &i in &exp.split.eval {
                let speaker = corpus.speakers[i].profile.id;
                let mine: Vec<_> = rows.iter().filter(|r| r.speaker == speaker).collect();
                let mean = |f: fn(&&crate::records::RunRow) -> f64| {
                    Moments::of(&mine.iter().map(f).collect::<Vec<_>>()).mean
                };
                let (sim, mos, intell) = (mean(|r| r.sim), mean(|r| r.mos), mean(|r| r.intell));
                let fused = mine
                    .iter()
                    .map(|r| Ok(fuse_scores(&ScoreTriple::new(r.sim, r.mos, r.intell)?, &full)))
                    .collect::<std::result::Result<Vec<_>, asrrl_core::scoring::ScoreError>>()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                out.push(AblationRow {
                    run_id: exp.spec.run_id.clone(),
                    mode,
                    variant: tag.clone(),
                    seed: exp.spec.rl.seed,
                    speaker,
                    sim,
                    mos,
                    intell,
                    fused: Moments::of(&fused).mean,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_variant.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_counts() {
        let spec = ExperimentSpec::default();
        let terms = score_term_variants(&spec);
        assert_eq!(terms.len(), 4);
        assert_eq!(terms[3].0, "sim");
        let segs = segment_variants(&spec);
        assert_eq!(segs.len(), 16);
        let mut tags: Vec<_> = segs.iter().map(|(t, _)| t.clone()).collect();
        tags.sort();
        tags.dedup();
        assert_eq!(tags.len(), 16);
        assert!(tags.contains(&"e".to_string()));
    }
}
