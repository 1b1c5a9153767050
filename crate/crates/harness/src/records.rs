//! Per-episode run records and their summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use asrrl_core::scoring::ScoreTriple;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// How the embedding of a row was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rl,
    Raw,
    Finetune,
    Oracle,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Rl => "rl",
            Variant::Raw => "raw",
            Variant::Finetune => "finetune",
            Variant::Oracle => "oracle",
        })
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(Variant::Rl),
            "raw" => Ok(Variant::Raw),
            "finetune" => Ok(Variant::Finetune),
            "oracle" => Ok(Variant::Oracle),
            other => Err(HarnessError::Config(format!(
                "unknown variant {other:?} (expected rl, raw, finetune or oracle)"
            ))),
        }
    }
}

/// A column of [`RunRow`] that summaries aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Sim,
    Mos,
    Intell,
    Fused,
}

/// One episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub scenario: String,
    pub gamma: f64,
    pub action_scale: f64,
    pub steps: usize,
    pub seed: u64,
    pub episode: usize,
    pub speaker: u64,
    pub text: u64,
    pub sim: f64,
    pub mos: f64,
    pub intell: f64,
    pub fused: f64,
    pub variant: Variant,
}

impl RunRow {
    pub fn triple(&self) -> Result<ScoreTriple> {
        ScoreTriple::new(self.sim, self.mos, self.intell)
            .map_err(|e| HarnessError::Config(format!("row {}: {e}", self.episode)))
    }
}

/// Mean and standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl fmt::Display for Moments {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Aggregate of all rows sharing a run id and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
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

impl SummaryRow {
    pub fn metric(&self, kind: Metric) -> Moments {
        let (mean, std) = match kind {
            Metric::Sim => (self.sim_mean, self.sim_std),
            Metric::Mos => (self.mos_mean, self.mos_std),
            Metric::Intell => (self.intell_mean, self.intell_std),
            Metric::Fused => (self.fused_mean, self.fused_std),
        };
        Moments { mean, std }
    }
}

pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, Variant), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.run_id.clone(), r.variant)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((run_id, variant), rs)| {
            let m = |f: fn(&RunRow) -> f64| Moments::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (sim, mos, intell, fused) = (m(|r| r.sim), m(|r| r.mos), m(|r| r.intell), m(|r| r.fused));
            SummaryRow {
                run_id,
                variant,
                n: rs.len(),
                sim_mean: sim.mean,
                sim_std: sim.std,
                mos_mean: mos.mean,
                mos_std: mos.std,
                intell_mean: intell.mean,
                intell_std: intell.std,
                fused_mean: fused.mean,
                fused_std: fused.std,
            }
        })
        .collect()
}

/// Serializes records as CSV with a header row.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.into()))?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_csv(rows, std::io::BufWriter::new(file))
}

pub fn read_csv_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Checks every row's scores against their declared ranges.
pub fn validate_rows(rows: &[RunRow]) -> Result<()> {
    rows.iter().try_for_each(|r| r.triple().map(|_| ()))
}
