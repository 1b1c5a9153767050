//! Synthetic corpus files.
//!
//! ```text
//! ASRRL-CORPUS v1 d_e=16 d_t=8 seed=7 env=voice d_s=32 d_v=8 sigma_ref=0.05 speaker_scale=0.025 k=3 speakers=50 texts=10 tau=0.5
//! <id>\t<e*>\t<ref;ref;...>\t<voiceprint>\t<text_id:f_t;...>
//! ```
//!
//! Vectors are comma-separated reals in shortest round-trip form.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use asrrl_core::env::{SpeakerProfile, SyntheticVoice, TradeoffVoice, Utterance, VoiceConfig, VoiceModel};
use asrrl_core::rng::substream;
use asrrl_core::{Embedding, TextFeatures};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MAGIC: &str = "ASRRL-CORPUS";
pub const VERSION: &str = "v1";

/// Which synthetic voice space a corpus was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Voice,
    Tradeoff,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Voice => "voice",
            EnvKind::Tradeoff => "tradeoff",
        })
    }
}

impl FromStr for EnvKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voice" => Ok(EnvKind::Voice),
            "tradeoff" => Ok(EnvKind::Tradeoff),
            other => Err(HarnessError::Config(format!(
                "unknown env {other:?} (expected voice or tradeoff)"
            ))),
        }
    }
}

/// Everything that determines a corpus file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub env: EnvKind,
    pub speakers: usize,
    /// Reference embeddings per speaker.
    pub refs: usize,
    pub texts_per_speaker: usize,
    pub d_e: usize,
    pub d_t: usize,
    pub d_s: usize,
    pub d_v: usize,
    pub sigma_ref: f64,
    /// Spread of true embeddings around the population centre.
    pub speaker_scale: f64,
    /// Threshold of the tradeoff space (ignored by the voice space).
    pub tau: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvKind::Voice,
            speakers: 50,
            refs: 3,
            texts_per_speaker: 10,
            d_e: 16,
            d_t: 8,
            d_s: 32,
            d_v: 8,
            sigma_ref: 0.05,
            speaker_scale: VoiceConfig::default().speaker_scale,
            tau: 0.5,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("speakers", self.speakers),
            ("refs", self.refs),
            ("texts", self.texts_per_speaker),
            ("d_e", self.d_e),
            ("d_t", self.d_t),
            ("d_s", self.d_s),
            ("d_v", self.d_v),
        ] {
            if v == 0 {
                return Err(HarnessError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.sigma_ref.is_finite() && self.sigma_ref >= 0.0) {
            return Err(HarnessError::Config(format!(
                "sigma_ref must be non-negative, got {}",
                self.sigma_ref
            )));
        }
        if !(self.speaker_scale.is_finite() && self.speaker_scale > 0.0) {
            return Err(HarnessError::Config(format!(
                "speaker_scale must be positive, got {}",
                self.speaker_scale
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(HarnessError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn voice_config(&self) -> VoiceConfig {
        VoiceConfig {
            d_e: self.d_e,
            d_t: self.d_t,
            d_s: self.d_s,
            d_v: self.d_v,
            sigma_ref: self.sigma_ref,
            speaker_scale: self.speaker_scale,
            ..VoiceConfig::default()
        }
    }

    /// The seeded voice model the corpus was sampled from.
    pub fn model(&self) -> Result<Arc<dyn VoiceModel>> {
        self.validate()?;
        Ok(match self.env {
            EnvKind::Voice => Arc::new(SyntheticVoice::new(self.voice_config(), self.seed)?),
            EnvKind::Tradeoff => Arc::new(self.tradeoff_model()?),
        })
    }

    /// The tradeoff space, with its direction drawn from the corpus seed.
    pub fn tradeoff_model(&self) -> Result<TradeoffVoice> {
        let w = TradeoffVoice::random_direction(&mut substream(self.seed, "tradeoff-direction"), self.d_e);
        Ok(TradeoffVoice::new(self.seed, self.d_t, &w, self.tau)?)
    }

    fn header(&self) -> String {
        format!(
            "{MAGIC} {VERSION} d_e={} d_t={} seed={} env={} d_s={} d_v={} sigma_ref={} speaker_scale={} k={} speakers={} texts={} tau={}",
            self.d_e,
            self.d_t,
            self.seed,
            self.env,
            self.d_s,
            self.d_v,
            self.sigma_ref,
            self.speaker_scale,
            self.refs,
            self.speakers,
            self.texts_per_speaker,
            self.tau
        )
    }
}

/// A speaker and the texts reserved for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerRecord {
    pub profile: SpeakerProfile,
    pub texts: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerRecord>,
}

/// Speaker indices of the training and held-out parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

pub fn gen_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let mut spec = *spec;
    if spec.env == EnvKind::Tradeoff {
        // The tradeoff space fixes its own speech and noise settings.
        let inner = *spec.tradeoff_model()?.voice().config();
        spec.d_s = inner.d_s;
        spec.d_v = inner.d_v;
        spec.sigma_ref = inner.sigma_ref;
        spec.speaker_scale = inner.speaker_scale;
    }
    let model = spec.model()?;
    let mut rng = substream(spec.seed, "corpus");
    let speakers = (0..spec.speakers as u64)
        .map(|id| {
            let profile = model.sample_speaker(&mut rng, id, spec.refs);
            let texts = (0..spec.texts_per_speaker as u64)
                .map(|j| {
                    let values = (0..spec.d_t).map(|_| rng.sample(StandardNormal)).collect();
                    Utterance {
                        id: id * spec.texts_per_speaker as u64 + j,
                        features: TextFeatures::new(values).expect("finite draws"),
                    }
                })
                .collect();
            SpeakerRecord { profile, texts }
        })
        .collect();
    Ok(Corpus { spec, speakers })
}

fn join(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").expect("writing to a string");
    }
    out
}

impl Corpus {
    pub fn to_text(&self) -> String {
        let mut out = self.spec.header();
        out.push('\n');
        for s in &self.speakers {
            let p = &s.profile;
            let refs: Vec<String> = p.refs.iter().map(|r| join(r.as_slice())).collect();
            let texts: Vec<String> = s
                .texts
                .iter()
                .map(|t| format!("{}:{}", t.id, join(t.features.as_slice())))
                .collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                p.id,
                join(p.true_embedding.as_slice()),
                refs.join(";"),
                join(&p.target_voiceprint),
                texts.join(";")
            )
            .expect("writing to a string");
        }
        out
    }

    /// Writes the corpus, refusing to replace an existing file unless `force`.
    pub fn write(&self, path: &Path, force: bool) -> Result<()> {
        if path.exists() && !force {
            return Err(HarnessError::Exists {
                path: path.to_path_buf(),
            });
        }
        fs::write(path, self.to_text()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| HarnessError::Corpus {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let spec = parse_header(header).map_err(|m| err(1, m))?;
        let mut speakers = Vec::with_capacity(spec.speakers);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let record = parse_record(line, &spec).map_err(|m| err(i + 2, m))?;
            speakers.push(record);
        }
        if speakers.len() != spec.speakers {
            return Err(err(
                1,
                format!(
                    "header announces {} speakers, file holds {}",
                    spec.speakers,
                    speakers.len()
                ),
            ));
        }
        Ok(Corpus { spec, speakers })
    }

    /// The last `round(fraction·n)` speakers (at least one, never all) are held out.
    pub fn split(&self, eval_fraction: f64) -> Result<Split> {
        let n = self.speakers.len();
        if n < 2 {
            return Err(HarnessError::Config(
                "a train/eval split needs at least two speakers".into(),
            ));
        }
        if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
            return Err(HarnessError::Config(format!(
                "eval fraction must lie strictly between 0 and 1, got {eval_fraction}"
            )));
        }
        let n_eval = ((n as f64 * eval_fraction).round() as usize).clamp(1, n - 1);
        Ok(Split {
            train: (0..n - n_eval).collect(),
            eval: (n - n_eval..n).collect(),
        })
    }
}

fn parse_header(line: &str) -> std::result::Result<CorpusSpec, String> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(format!("not a corpus file (expected {MAGIC} header)"));
    }
    match tokens.next() {
        Some(VERSION) => {}
        Some(v) => return Err(format!("unsupported corpus version {v} (expected {VERSION})")),
        None => return Err("missing corpus version".into()),
    }
    let mut spec = CorpusSpec::default();
    let (mut have_de, mut have_dt, mut have_seed) = (false, false, false);
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| format!("header token {token:?} is not key=value"))?;
        let bad = |_| format!("bad value for {key}: {value:?}");
        match key {
            "d_e" => {
                spec.d_e = value.parse().map_err(bad)?;
                have_de = true;
            }
            "d_t" => {
                spec.d_t = value.parse().map_err(bad)?;
                have_dt = true;
            }
            "seed" => {
                spec.seed = value.parse().map_err(bad)?;
                have_seed = true;
            }
            "env" => spec.env = value.parse().map_err(|e: HarnessError| e.to_string())?,
            "d_s" => spec.d_s = value.parse().map_err(bad)?,
            "d_v" => spec.d_v = value.parse().map_err(bad)?,
            "sigma_ref" => spec.sigma_ref = value.parse().map_err(|_| format!("bad value for {key}: {value:?}"))?,
            "speaker_scale" => spec.speaker_scale = value.parse().map_err(|_| format!("bad value for {key}: {value:?}"))?,
            "k" => spec.refs = value.parse().map_err(bad)?,
            "speakers" => spec.speakers = value.parse().map_err(bad)?,
            "texts" => spec.texts_per_speaker = value.parse().map_err(bad)?,
            "tau" => spec.tau = value.parse().map_err(|_| format!("bad value for {key}: {value:?}"))?,
            other => return Err(format!("unknown header key {other:?}")),
        }
    }
    if !(have_de && have_dt && have_seed) {
        return Err("header must carry d_e, d_t and seed".into());
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn parse_vector(field: &str, len: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
    let values = field
        .split(',')
        .map(|v| v.parse::<f64>().map_err(|_| format!("{what}: bad number {v:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != len {
        return Err(format!("{what}: expected {len} values, got {}", values.len()));
    }
    Ok(values)
}

fn parse_record(line: &str, spec: &CorpusSpec) -> std::result::Result<SpeakerRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 tab-separated fields, got {}", fields.len()));
    }
    let id: u64 = fields[0]
        .parse()
        .map_err(|_| format!("bad speaker id {:?}", fields[0]))?;
    let embedding = |v: Vec<f64>| Embedding::new(v).map_err(|e| e.to_string());
    let true_embedding = embedding(parse_vector(fields[1], spec.d_e, "true embedding")?)?;
    let refs = fields[2]
        .split(';')
        .map(|r| embedding(parse_vector(r, spec.d_e, "reference")?))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if refs.len() != spec.refs {
        return Err(format!("expected {} references, got {}", spec.refs, refs.len()));
    }
    let target_voiceprint = parse_vector(fields[3], spec.d_v, "voiceprint")?;
    let texts = fields[4]
        .split(';')
        .map(|t| {
            let (tid, values) = t
                .split_once(':')
                .ok_or_else(|| format!("text {t:?} lacks an id"))?;
            let id = tid.parse().map_err(|_| format!("bad text id {tid:?}"))?;
            let features = TextFeatures::new(parse_vector(values, spec.d_t, "text")?)
                .map_err(|e| e.to_string())?;
            Ok(Utterance { id, features })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    if texts.len() != spec.texts_per_speaker {
        return Err(format!(
            "expected {} texts, got {}",
            spec.texts_per_speaker,
            texts.len()
        ));
    }
    Ok(SpeakerRecord {
        profile: SpeakerProfile {
            id,
            true_embedding,
            refs,
            target_voiceprint,
        },
        texts,
    })
}

/// Default location for derived files next to a corpus.
pub fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            speakers: 4,
            refs: 2,
            texts_per_speaker: 3,
            d_e: 3,
            d_t: 2,
            seed: 11,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = gen_corpus(&small()).unwrap();
        let text = c.to_text();
        let back = Corpus::parse(&text, Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn header_is_versioned() {
        let text = gen_corpus(&small()).unwrap().to_text();
        assert!(text.starts_with("ASRRL-CORPUS v1 d_e=3 d_t=2 seed=11 "));
        let bumped = text.replacen("v1", "v2", 1);
        assert!(Corpus::parse(&bumped, Path::new("x")).is_err());
    }

    #[test]
    fn truncated_record_names_the_line() {
        let text = gen_corpus(&small()).unwrap().to_text();
        let cut = &text[..text.len() - 20];
        match Corpus::parse(cut, Path::new("x")) {
            Err(HarnessError::Corpus { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_is_disjoint() {
        let mut spec = small();
        spec.speakers = 50;
        let c = gen_corpus(&spec).unwrap();
        let s = c.split(0.2).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (40, 10));
        assert!(s.train.iter().all(|i| !s.eval.contains(i)));
    }
}
