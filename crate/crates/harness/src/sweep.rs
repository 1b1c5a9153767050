//! One-axis hyperparameter sweeps with shared seeds.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{HarnessError, Result};
use crate::records::{summarize, RunRow, Variant};
use crate::run::{evaluate, train, Experiment};
use crate::settings::ExperimentSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Gamma,
    ActionScale,
    /// Episode length of the experiment's scenario.
    Steps,
    Lambda1,
    Lambda2,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Gamma => "gamma",
            Axis::ActionScale => "action_scale",
            Axis::Steps => "steps",
            Axis::Lambda1 => "lambda1",
            Axis::Lambda2 => "lambda2",
        })
    }
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Axis::Gamma),
            "action_scale" => Ok(Axis::ActionScale),
            "steps" => Ok(Axis::Steps),
            "lambda1" => Ok(Axis::Lambda1),
            "lambda2" => Ok(Axis::Lambda2),
            other => Err(HarnessError::Config(format!(
                "unknown sweep axis {other:?} (expected gamma, action_scale, steps, lambda1 or lambda2)"
            ))),
        }
    }
}

impl Axis {
    /// `spec` with the swept parameter set to `value`; nothing else changes.
    pub fn apply(self, spec: &ExperimentSpec, value: f64) -> Result<ExperimentSpec> {
        let mut s = spec.clone();
        match self {
            Axis::Gamma => s.rl.gamma = value,
            Axis::ActionScale => s.rl.action_scale = value,
            Axis::Lambda1 => s.rl.lambda1 = value,
            Axis::Lambda2 => s.rl.lambda2 = value,
            Axis::Steps => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(HarnessError::Config(format!(
                        "steps must be positive integers, got {value}"
                    )));
                }
                match s.scenario {
                    asrrl_core::Scenario::Ss => s.rl.steps_ss = value as usize,
                    asrrl_core::Scenario::Fs => s.rl.steps_fs = value as usize,
                }
            }
        }
        s.run_id = format!("{}-{}={}", spec.run_id, self, value);
        s.validate()?;
        Ok(s)
    }
}

/// Parses a comma-separated value list, refusing duplicates.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::Config(format!("bad sweep value {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    check_distinct(&values)?;
    Ok(values)
}

pub fn check_distinct(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(HarnessError::Config("a sweep needs at least one value".into()));
    }
    for (i, a) in values.iter().enumerate() {
        if values[..i].contains(a) {
            return Err(HarnessError::Config(format!("duplicate sweep value {a}")));
        }
    }
    Ok(())
}

/// One held-out episode of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub run_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub episode: usize,
    pub speaker: u64,
    pub text: u64,
    pub sim: f64,
    pub mos: f64,
    pub intell: f64,
    pub fused: f64,
}

/// Per value and variant aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: Axis,
    pub value: f64,
    pub variant: Variant,
    pub n: usize,
    pub sim_mean: f64,
    pub sim_std: f64,
    pub mos_mean: f64,
    pub mos_std: f64,
    pub intell_mean: f64,
    pub intell_std: f64,
    pub fused_mean: f64,
    pub fused_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

fn sweep_row(axis: Axis, value: f64, r: RunRow) -> SweepRow {
    SweepRow {
        axis,
        value,
        run_id: r.run_id,
        variant: r.variant,
        seed: r.seed,
        episode: r.episode,
        speaker: r.speaker,
        text: r.text,
        sim: r.sim,
        mos: r.mos,
        intell: r.intell,
        fused: r.fused,
    }
}

/// Trains and evaluates one run per value. Every run shares the corpus, the
/// evaluation texts and the initial network weights (all seeded from the
/// same root seed), so values differ only through the swept parameter.
pub fn sweep(spec: &ExperimentSpec, corpus: Arc<Corpus>, axis: Axis, values: &[f64]) -> Result<SweepOutcome> {
    check_distinct(values)?;
    let specs = values
        .iter()
        .map(|&v| axis.apply(spec, v))
        .collect::<Result<Vec<_>>>()?;
    let per_value: Vec<Vec<RunRow>> = specs
        .into_par_iter()
        .map(|s| {
            let exp = Experiment::new(s, Arc::clone(&corpus))?;
            let outcome = train(&exp)?;
            evaluate(&exp, Some(outcome.policy()), &[Variant::Rl, Variant::Raw])
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (&value, eval_rows) in values.iter().zip(per_value) {
        for s in summarize(&eval_rows) {
            summary.push(SweepSummary {
                axis,
                value,
                variant: s.variant,
                n: s.n,
                sim_mean: s.sim_mean,
                sim_std: s.sim_std,
                mos_mean: s.mos_mean,
                mos_std: s.mos_std,
                intell_mean: s.intell_mean,
                intell_std: s.intell_std,
                fused_mean: s.fused_mean,
                fused_std: s.fused_std,
            });
        }
        rows.extend(eval_rows.into_iter().map(|r| sweep_row(axis, value, r)));
    }
    Ok(SweepOutcome { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_refused() {
        assert!(parse_values("0,0.3,0.9,0.99").is_ok());
        assert!(parse_values("0.3,0.30").is_err());
        assert!(parse_values("").is_err());
    }

    #[test]
    fn apply_touches_only_the_axis() {
        let base = ExperimentSpec::default();
        let s = Axis::Steps.apply(&base, 5.0).unwrap();
        assert_eq!(s.rl.steps_ss, 5);
        assert_eq!(
            ExperimentSpec {
                run_id: base.run_id.clone(),
                rl: asrrl_core::RLConfig {
                    steps_ss: base.rl.steps_ss,
                    ..s.rl.clone()
                },
                ..s
            },
            base
        );
        assert!(Axis::Steps.apply(&base, 2.5).is_err());
        assert!(Axis::Gamma.apply(&base, 1.5).is_err());
    }
}
