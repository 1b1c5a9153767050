//! Flat `key = value` experiment configuration.
//!
//! Every [`RLConfig`] field is addressable by its name; the remaining keys
//! describe the corpus, the split, ablation toggles and output. Lines starting
//! with `#` and trailing `# ...` comments are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use asrrl_core::scoring::RewardWeights;
use asrrl_core::{RLConfig, Scenario, Segment, SegmentMask};
use serde::Serialize;
use serde_json::Value;

use crate::corpus::CorpusSpec;
use crate::error::{HarnessError, Result};

/// One experiment: what to train, on what, and where to write the results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub run_id: String,
    pub scenario: Scenario,
    pub rl: RLConfig,
    /// Used when the harness generates its own corpus (sweeps, ablations, comparisons).
    pub corpus: CorpusSpec,
    pub eval_fraction: f64,
    pub enable_mos: bool,
    pub enable_intell: bool,
    pub mask: SegmentMask,
    /// Texts per held-out speaker used in evaluation; 0 means all.
    pub eval_texts: usize,
    pub finetune_steps: usize,
    pub finetune_step_size: f64,
    /// Grid points per axis for the oracle baseline.
    pub oracle_points: usize,
    /// Consecutive collapsed episodes that abort training.
    pub divergence_window: usize,
    /// Relative drop below the raw score that counts an episode as collapsed.
    pub divergence_drop: f64,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            scenario: Scenario::Ss,
            rl: RLConfig::default(),
            corpus: CorpusSpec::default(),
            eval_fraction: 0.2,
            enable_mos: true,
            enable_intell: true,
            mask: SegmentMask::default(),
            eval_texts: 0,
            finetune_steps: 2000,
            finetune_step_size: 0.01,
            oracle_points: 41,
            divergence_window: 100,
            divergence_drop: 0.5,
            out: PathBuf::from("runs"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value for {key}: {value:?}")))
}

/// Converts `value` to the JSON type already held in `slot`.
fn coerce(key: &str, value: &str, slot: &Value) -> Result<Value> {
    Ok(match slot {
        Value::Bool(_) => Value::Bool(parse(key, value)?),
        Value::Number(n) if n.is_u64() => Value::from(parse::<u64>(key, value)?),
        Value::Number(_) => Value::from(parse::<f64>(key, value)?),
        _ => Value::String(value.to_string()),
    })
}

impl ExperimentSpec {
    pub fn weights(&self) -> RewardWeights {
        RewardWeights {
            enable_mos: self.enable_mos,
            enable_intell: self.enable_intell,
            ..RewardWeights::new(self.rl.lambda1, self.rl.lambda2)
        }
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "run_id" => self.run_id = value.to_string(),
            "scenario" => {
                self.scenario = value
                    .parse()
                    .map_err(|e: asrrl_core::DomainError| HarnessError::Config(e.to_string()))?
            }
            "eval_fraction" => self.eval_fraction = parse(key, value)?,
            "enable_mos" => self.enable_mos = parse(key, value)?,
            "enable_intell" => self.enable_intell = parse(key, value)?,
            "segments" => {
                let names: Vec<&str> = value.split(',').filter(|s| !s.trim().is_empty()).collect();
                self.mask = SegmentMask::from_names(&names)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            "drop_segments" => {
                for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let segment = Segment::from_name(name)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    self.mask = self
                        .mask
                        .without(segment)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                }
            }
            "eval_texts" => self.eval_texts = parse(key, value)?,
            "finetune_steps" => self.finetune_steps = parse(key, value)?,
            "finetune_step_size" => self.finetune_step_size = parse(key, value)?,
            "oracle_points" => self.oracle_points = parse(key, value)?,
            "divergence_window" => self.divergence_window = parse(key, value)?,
            "divergence_drop" => self.divergence_drop = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "env" => self.corpus.env = value.parse()?,
            "speakers" => self.corpus.speakers = parse(key, value)?,
            "refs" => self.corpus.refs = parse(key, value)?,
            "texts" => self.corpus.texts_per_speaker = parse(key, value)?,
            "d_s" => self.corpus.d_s = parse(key, value)?,
            "d_v" => self.corpus.d_v = parse(key, value)?,
            "sigma_ref" => self.corpus.sigma_ref = parse(key, value)?,
            "speaker_scale" => self.corpus.speaker_scale = parse(key, value)?,
            "tau" => self.corpus.tau = parse(key, value)?,
            _ => {
                let mut rl = serde_json::to_value(&self.rl).expect("config serializes");
                let slot = rl
                    .get_mut(key)
                    .ok_or_else(|| HarnessError::Config(format!("unknown setting {key:?}")))?;
                *slot = coerce(key, value, slot)?;
                self.rl = serde_json::from_value(rl)
                    .map_err(|e| HarnessError::Config(format!("{key}: {e}")))?;
                match key {
                    "d_e" => self.corpus.d_e = self.rl.d_e,
                    "d_t" => self.corpus.d_t = self.rl.d_t,
                    "seed" => self.corpus.seed = self.rl.seed,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.as_ref().split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("override {:?} is not key=value", o.as_ref()))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.rl
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.corpus.validate()?;
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(HarnessError::Config(format!(
                "run id {:?} must be a non-empty plain name",
                self.run_id
            )));
        }
        if !(self.divergence_drop > 0.0 && self.divergence_window > 0) {
            return Err(HarnessError::Config(
                "divergence guard needs a positive window and drop".into(),
            ));
        }
        if self.oracle_points < 2 {
            return Err(HarnessError::Config("oracle_points must be at least 2".into()));
        }
        Ok(())
    }
}
