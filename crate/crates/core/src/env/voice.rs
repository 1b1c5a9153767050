use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EnvError, SpeakerProfile, VoiceModel};
use crate::embedding::{Embedding, TextFeatures};
use crate::error::DomainError;
use crate::rng::{substream, Rng};
use crate::scoring::{
    cosine_similarity, IntelligibilityShell, QualityShell, RewardWeights, ScoreTriple, ScorerSet,
    SpeechFeatures, VoiceprintSimilarity,
};
use crate::state::StateDims;

/// Shape and scale parameters of [`SyntheticVoice`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoiceConfig {
    pub d_e: usize,
    pub d_t: usize,
    /// Speech feature length.
    pub d_s: usize,
    /// Voiceprint length.
    pub d_v: usize,
    /// Standard deviation of the noise separating a reference embedding from the true one.
    pub sigma_ref: f64,
    /// Per-coordinate spread of true embeddings around the population centre.
    pub speaker_scale: f64,
    /// How strongly a speaker-sized change of embedding moves the synthesizer input.
    pub embed_gain: f64,
    pub text_gain: f64,
    pub bias_scale: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Quality and intelligibility radius; `None` uses 1.5 times the mean true-embedding norm.
    pub radius: Option<f64>,
}

impl Default for VoiceConfig {
    fn default() -> Self {
        Self {
            d_e: 16,
            d_t: 8,
            d_s: 32,
            d_v: 8,
            sigma_ref: 0.05,
            speaker_scale: 0.025,
            embed_gain: 2.0,
            text_gain: 2.0,
            bias_scale: 0.5,
            beta: 2.0,
            kappa: 2.0,
            radius: None,
        }
    }
}

impl VoiceConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, v) in [
            ("d_e", self.d_e),
            ("d_t", self.d_t),
            ("d_s", self.d_s),
            ("d_v", self.d_v),
        ] {
            if v == 0 {
                return Err(DomainError::Invalid(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("sigma_ref", self.sigma_ref),
            ("bias_scale", self.bias_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DomainError::Invalid(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("speaker_scale", self.speaker_scale),
            ("embed_gain", self.embed_gain),
            ("text_gain", self.text_gain),
            ("beta", self.beta),
            ("kappa", self.kappa),
            ("radius", self.radius.unwrap_or(1.0)),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DomainError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Rank of the subspace true embeddings vary in.
    pub fn speaker_rank(&self) -> usize {
        (self.d_e / 4).max(1)
    }
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| std * rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector(rng: &mut Rng, len: usize, std: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| std * rng.sample::<f64, _>(StandardNormal))
}

/// Orthonormalizes the columns of `m` in place (modified Gram-Schmidt).
fn orthonormalize(m: &mut Array2<f64>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            let proj = m.column(i).dot(&m.column(j));
            let qi = m.column(i).to_owned();
            m.column_mut(j).scaled_add(-proj, &qi);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
}

/// A seeded stand-in for a frozen TTS model plus voiceprint, quality and
/// intelligibility scorers.
///
/// Speech is `tanh(W1·f_t + W2·e + b)`; the voiceprint is `V·s`. True speaker
/// embeddings live on an affine low-rank subspace `μ + U·z`, so the component
/// of a reference embedding orthogonal to that subspace is pure noise and can
/// be learned away.
#[derive(Debug, Clone)]
pub struct SyntheticVoice {
    config: VoiceConfig,
    seed: u64,
    w1: Array2<f64>,
    w2: Array2<f64>,
    b: Array1<f64>,
    v: Arc<Array2<f64>>,
    reencoder: Array2<f64>,
    calibration: TextFeatures,
    basis: Array2<f64>,
    centre: Array1<f64>,
    r_mos: f64,
    r_in: f64,
}

impl SyntheticVoice {
    pub fn new(config: VoiceConfig, seed: u64) -> Result<Self, DomainError> {
        config.validate()?;
        let VoiceConfig {
            d_e, d_t, d_s, d_v, ..
        } = config;
        let rank = config.speaker_rank();
        let mut rng = substream(seed, "voice-env");
        let w1 = gaussian_matrix(&mut rng, d_s, d_t, config.text_gain / (d_t as f64).sqrt());
        let w2 = gaussian_matrix(
            &mut rng,
            d_s,
            d_e,
            config.embed_gain / ((d_e as f64).sqrt() * config.speaker_scale),
        );
        let b0 = gaussian_vector(&mut rng, d_s, config.bias_scale);
        let v = gaussian_matrix(&mut rng, d_v, d_s, 1.0 / (d_s as f64).sqrt());
        let reencoder = gaussian_matrix(&mut rng, d_e, d_s, 1.0 / (d_s as f64).sqrt());
        let calibration = TextFeatures::new(gaussian_vector(&mut rng, d_t, 1.0).to_vec())?;
        let mut basis = gaussian_matrix(&mut rng, d_e, rank, 1.0);
        orthonormalize(&mut basis);
        let raw_centre = gaussian_vector(&mut rng, d_e, 1.0);
        let centre = if rank < d_e {
            let inside = basis.dot(&basis.t().dot(&raw_centre));
            let c = &raw_centre - &inside;
            let n = c.dot(&c).sqrt();
            c / n
        } else {
            Array1::zeros(d_e)
        };
        let b = &b0 - &w2.dot(&centre);

        let mut voice = Self {
            config,
            seed,
            w1,
            w2,
            b,
            v: Arc::new(v),
            reencoder,
            calibration,
            basis,
            centre,
            r_mos: 1.0,
            r_in: 1.0,
        };
        let radius = match config.radius {
            Some(r) => r,
            None => 1.5 * voice.mean_true_norm(4096),
        };
        voice.r_mos = radius;
        voice.r_in = radius;
        Ok(voice)
    }

    /// Monte Carlo estimate of `E‖e*‖` from a dedicated substream.
    fn mean_true_norm(&self, samples: usize) -> f64 {
        let mut rng = substream(self.seed, "voice-radius");
        let total: f64 = (0..samples)
            .map(|_| self.sample_true_embedding(&mut rng).norm())
            .sum();
        total / samples as f64
    }

    pub fn config(&self) -> &VoiceConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn radii(&self) -> (f64, f64) {
        (self.r_mos, self.r_in)
    }

    pub fn decay_rates(&self) -> (f64, f64) {
        (self.config.beta, self.config.kappa)
    }

    pub fn voiceprint_projection(&self) -> &Arc<Array2<f64>> {
        &self.v
    }

    /// Population centre `μ` of true embeddings.
    pub fn centre(&self) -> &Array1<f64> {
        &self.centre
    }

    /// `d_e × r` orthonormal basis of the speaker subspace.
    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Matrices as a flat list of bit patterns, for determinism checks.
    pub fn fingerprint(&self) -> Vec<u64> {
        [&self.w1, &self.w2, self.v.as_ref(), &self.reencoder, &self.basis]
            .into_iter()
            .flat_map(|m| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .chain(self.b.iter().map(|x| x.to_bits()))
            .chain(self.centre.iter().map(|x| x.to_bits()))
            .chain(self.calibration.as_slice().iter().map(|x| x.to_bits()))
            .collect()
    }

    pub fn sample_true_embedding(&self, rng: &mut Rng) -> Embedding {
        let rank = self.basis.ncols();
        let std = self.config.speaker_scale * (self.config.d_e as f64 / rank as f64).sqrt();
        let z = gaussian_vector(rng, rank, std);
        let e = &self.centre + &self.basis.dot(&z);
        Embedding::new(e.to_vec()).expect("finite by construction")
    }

    /// A profile whose references are `e* + σ_ref·N(0, I)`.
    pub fn profile_for(&self, rng: &mut Rng, id: u64, true_embedding: Embedding, k: usize) -> SpeakerProfile {
        let refs = (0..k)
            .map(|_| {
                let noise = gaussian_vector(rng, self.config.d_e, self.config.sigma_ref);
                let r = &ArrayView1::from(true_embedding.as_slice()) + &noise;
                Embedding::new(r.to_vec()).expect("finite by construction")
            })
            .collect();
        let target_voiceprint = self.target_voiceprint(&true_embedding);
        SpeakerProfile {
            id,
            true_embedding,
            refs,
            target_voiceprint,
        }
    }

    /// `V·synth(f_cal, e)`.
    pub fn target_voiceprint(&self, e: &Embedding) -> Vec<f64> {
        let s = self
            .synth(&self.calibration, e)
            .expect("embedding dimension matches the model");
        self.voiceprint(&s)
    }

    fn check_dims(&self, f_t: &TextFeatures, e: &Embedding) -> Result<(), DomainError> {
        if f_t.dim() != self.config.d_t {
            return Err(DomainError::DimensionMismatch {
                segment: "f_t".into(),
                expected: self.config.d_t,
                actual: f_t.dim(),
            });
        }
        if e.dim() != self.config.d_e {
            return Err(DomainError::DimensionMismatch {
                segment: "e".into(),
                expected: self.config.d_e,
                actual: e.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn quality(&self, norm: f64) -> f64 {
        5.0 * (-self.config.beta * (norm - self.r_mos).max(0.0)).exp()
    }

    pub(crate) fn intelligibility(&self, norm: f64) -> f64 {
        1.0 - (-self.config.kappa * (norm - self.r_in).max(0.0)).exp()
    }

}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl VoiceModel for SyntheticVoice {
    fn dims(&self) -> StateDims {
        StateDims {
            d_t: self.config.d_t,
            d_e: self.config.d_e,
            d_v: self.config.d_v,
        }
    }

    fn speech_dim(&self) -> usize {
        self.config.d_s
    }

    fn calibration_text(&self) -> &TextFeatures {
        &self.calibration
    }

    fn synth(&self, f_t: &TextFeatures, e: &Embedding) -> Result<SpeechFeatures, DomainError> {
        self.check_dims(f_t, e)?;
        let z = self.w1.dot(&ArrayView1::from(f_t.as_slice()))
            + self.w2.dot(&ArrayView1::from(e.as_slice()))
            + &self.b;
        SpeechFeatures::new(z.mapv(f64::tanh).to_vec())
    }

    fn voiceprint(&self, speech: &SpeechFeatures) -> Vec<f64> {
        self.v.dot(&ArrayView1::from(speech.as_slice())).to_vec()
    }

    fn reencode(&self, speech: &SpeechFeatures) -> Embedding {
        let e = &self.centre
            + &(self.reencoder.dot(&ArrayView1::from(speech.as_slice())) * self.config.speaker_scale);
        Embedding::new(e.to_vec()).expect("finite by construction")
    }

    fn score_detail(
        &self,
        f_t: &TextFeatures,
        e: &Embedding,
        target_voiceprint: &[f64],
    ) -> Result<(ScoreTriple, f64), EnvError> {
        if target_voiceprint.len() != self.config.d_v {
            return Err(DomainError::DimensionMismatch {
                segment: "target voiceprint".into(),
                expected: self.config.d_v,
                actual: target_voiceprint.len(),
            }
            .into());
        }
        let speech = self.synth(f_t, e)?;
        let vp = self.v.dot(&ArrayView1::from(speech.as_slice()));
        let cos = cosine_similarity(vp.view(), ArrayView1::from(target_voiceprint));
        let norm = e.norm();
        let triple = ScoreTriple::new(
            (1.0 + cos) / 2.0,
            self.quality(norm),
            self.intelligibility(norm),
        )?;
        Ok((triple, vp.dot(&vp).sqrt()))
    }

    fn voiceprint_lipschitz(&self) -> f64 {
        frobenius(&self.v) * frobenius(&self.w2)
    }

    fn lipschitz(&self, weights: &RewardWeights, min_voiceprint_norm: f64) -> f64 {
        let sim = if min_voiceprint_norm > 0.0 {
            0.5 * self.voiceprint_lipschitz() / min_voiceprint_norm
        } else {
            f64::INFINITY
        };
        let mos = if weights.enable_mos {
            weights.lambda1 * self.config.beta
        } else {
            0.0
        };
        let intell = if weights.enable_intell {
            weights.lambda2 * self.config.kappa
        } else {
            0.0
        };
        sim + mos + intell
    }

    fn sample_speaker(&self, rng: &mut Rng, id: u64, k: usize) -> SpeakerProfile {
        let e_star = self.sample_true_embedding(rng);
        self.profile_for(rng, id, e_star, k)
    }

    fn scorers(&self) -> ScorerSet {
        ScorerSet::new(
            Arc::new(VoiceprintSimilarity::new(Arc::clone(&self.v))),
            Arc::new(QualityShell {
                radius: self.r_mos,
                decay: self.config.beta,
            }),
            Arc::new(IntelligibilityShell {
                radius: self.r_in,
                decay: self.config.kappa,
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrices() {
        let a = SyntheticVoice::new(VoiceConfig::default(), 11).unwrap();
        let b = SyntheticVoice::new(VoiceConfig::default(), 11).unwrap();
        let c = SyntheticVoice::new(VoiceConfig::default(), 12).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn basis_is_orthonormal_and_centre_orthogonal() {
        let v = SyntheticVoice::new(VoiceConfig::default(), 3).unwrap();
        let g = v.basis().t().dot(v.basis());
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-12);
            }
        }
        assert!(v.basis().t().dot(v.centre()).iter().all(|x| x.abs() < 1e-12));
        assert!((v.centre().dot(v.centre()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn true_embedding_on_calibration_text_scores_one() {
        let v = SyntheticVoice::new(VoiceConfig::default(), 5).unwrap();
        let mut rng = substream(5, "t");
        let p = v.sample_speaker(&mut rng, 0, 2);
        let (t, _) = v
            .score_detail(v.calibration_text(), &p.true_embedding, &p.target_voiceprint)
            .unwrap();
        assert_eq!(t.sim(), 1.0);
        assert_eq!(t.mos(), 5.0);
        assert_eq!(t.intell(), 0.0);
    }

    #[test]
    fn radius_scales_with_true_norm() {
        let v = SyntheticVoice::new(VoiceConfig::default(), 8).unwrap();
        let (r, _) = v.radii();
        // The centre has unit norm and the subspace spread is small.
        assert!(r > 1.45 && r < 1.6, "{r}");
        let fixed = SyntheticVoice::new(
            VoiceConfig {
                radius: Some(0.7),
                ..VoiceConfig::default()
            },
            8,
        )
        .unwrap();
        assert_eq!(fixed.radii(), (0.7, 0.7));
    }
}
