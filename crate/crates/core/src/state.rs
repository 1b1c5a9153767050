//! Flattened RL state: `[f_t | sep | e | f_rv? | e_s? | f_sv?]`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, TextFeatures};
use crate::error::{check_finite, DomainError};

/// Value stored in the separator slot.
pub const SEPARATOR: f64 = 0.0;

/// State segments, in their fixed flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Text,
    Separator,
    Embedding,
    PriorVoiceprint,
    PosteriorEmbedding,
    PosteriorVoiceprint,
}

impl Segment {
    pub const ALL: [Segment; 6] = [
        Segment::Text,
        Segment::Separator,
        Segment::Embedding,
        Segment::PriorVoiceprint,
        Segment::PosteriorEmbedding,
        Segment::PosteriorVoiceprint,
    ];

    /// Short name used in config files and CSV tags.
    pub fn name(self) -> &'static str {
        match self {
            Segment::Text => "f_t",
            Segment::Separator => "sep",
            Segment::Embedding => "e",
            Segment::PriorVoiceprint => "f_rv",
            Segment::PosteriorEmbedding => "e_s",
            Segment::PosteriorVoiceprint => "f_sv",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, DomainError> {
        Segment::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| DomainError::UnknownSegment(name.to_string()))
    }

    /// Posterior segments depend on the latest synthesis and are refreshed every step.
    pub fn is_posterior(self) -> bool {
        matches!(self, Segment::PosteriorEmbedding | Segment::PosteriorVoiceprint)
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which toggleable segments are part of the state.
///
/// The separator and the speaker embedding are always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentMask {
    pub text: bool,
    pub prior_voiceprint: bool,
    pub posterior_embedding: bool,
    pub posterior_voiceprint: bool,
}

impl Default for SegmentMask {
    fn default() -> Self {
        Self {
            text: true,
            prior_voiceprint: false,
            posterior_embedding: false,
            posterior_voiceprint: false,
        }
    }
}

impl SegmentMask {
    /// Builds a mask from segment names; `e` and `sep` are accepted and implied.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, DomainError> {
        let mut mask = SegmentMask {
            text: false,
            ..SegmentMask::default()
        };
        for name in names {
            match Segment::from_name(name.as_ref().trim())? {
                Segment::Text => mask.text = true,
                Segment::PriorVoiceprint => mask.prior_voiceprint = true,
                Segment::PosteriorEmbedding => mask.posterior_embedding = true,
                Segment::PosteriorVoiceprint => mask.posterior_voiceprint = true,
                Segment::Separator | Segment::Embedding => {}
            }
        }
        Ok(mask)
    }

    /// This mask with one segment switched off. The embedding and the
    /// separator are structural and refuse to be dropped.
    pub fn without(mut self, segment: Segment) -> Result<Self, DomainError> {
        match segment {
            Segment::Text => self.text = false,
            Segment::PriorVoiceprint => self.prior_voiceprint = false,
            Segment::PosteriorEmbedding => self.posterior_embedding = false,
            Segment::PosteriorVoiceprint => self.posterior_voiceprint = false,
            Segment::Separator | Segment::Embedding => return Err(DomainError::EmbeddingRequired),
        }
        Ok(self)
    }

    pub fn enabled(&self, segment: Segment) -> bool {
        match segment {
            Segment::Text => self.text,
            Segment::Separator | Segment::Embedding => true,
            Segment::PriorVoiceprint => self.prior_voiceprint,
            Segment::PosteriorEmbedding => self.posterior_embedding,
            Segment::PosteriorVoiceprint => self.posterior_voiceprint,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        Segment::ALL.into_iter().filter(|s| self.enabled(*s))
    }

    pub fn needs_posterior(&self) -> bool {
        self.posterior_embedding || self.posterior_voiceprint
    }

    /// Compact tag such as `f_t+e+f_sv`, used in ablation output.
    pub fn tag(&self) -> String {
        self.segments()
            .filter(|s| *s != Segment::Separator)
            .map(Segment::name)
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Lengths of the variable-size segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDims {
    pub d_t: usize,
    pub d_e: usize,
    /// Voiceprint length (used by `f_rv` and `f_sv`).
    pub d_v: usize,
}

impl StateDims {
    pub fn segment_len(&self, segment: Segment) -> usize {
        match segment {
            Segment::Text => self.d_t,
            Segment::Separator => 1,
            Segment::Embedding | Segment::PosteriorEmbedding => self.d_e,
            Segment::PriorVoiceprint | Segment::PosteriorVoiceprint => self.d_v,
        }
    }

    pub fn layout(&self, mask: &SegmentMask) -> StateLayout {
        let mut offset = 0;
        let spans = mask
            .segments()
            .map(|s| {
                let len = self.segment_len(s);
                let span = (s, offset..offset + len);
                offset += len;
                span
            })
            .collect();
        StateLayout { spans, len: offset }
    }
}

/// Where each segment lives inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    spans: Vec<(Segment, Range<usize>)>,
    len: usize,
}

impl StateLayout {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spans(&self) -> &[(Segment, Range<usize>)] {
        &self.spans
    }

    pub fn range(&self, segment: Segment) -> Option<Range<usize>> {
        self.spans
            .iter()
            .find(|(s, _)| *s == segment)
            .map(|(_, r)| r.clone())
    }
}

/// Optional segment payloads; only the ones enabled by the mask are consumed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptionalSegments {
    pub prior_voiceprint: Option<Vec<f64>>,
    pub posterior_embedding: Option<Embedding>,
    pub posterior_voiceprint: Option<Vec<f64>>,
}

/// The flattened state plus its segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    values: Vec<f64>,
    layout: StateLayout,
}

impl StateVector {
    /// Re-attaches a layout to raw values (the inverse of [`StateVector::as_slice`]).
    pub fn from_parts(values: Vec<f64>, layout: StateLayout) -> Result<Self, DomainError> {
        if values.len() != layout.len() {
            return Err(DomainError::DimensionMismatch {
                segment: "state".into(),
                expected: layout.len(),
                actual: values.len(),
            });
        }
        check_finite("state", &values)?;
        Ok(Self { values, layout })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn segment(&self, segment: Segment) -> Option<&[f64]> {
        self.layout.range(segment).map(|r| &self.values[r])
    }

    /// The speaker-embedding segment.
    pub fn embedding(&self) -> Embedding {
        let e = self
            .segment(Segment::Embedding)
            .expect("embedding segment is always present");
        Embedding::new(e.to_vec()).expect("state values are finite")
    }
}

/// Concatenates the enabled segments in their fixed order.
pub fn flatten_state(
    dims: &StateDims,
    f_t: &TextFeatures,
    e: &Embedding,
    optional: &OptionalSegments,
    mask: &SegmentMask,
) -> Result<StateVector, DomainError> {
    let layout = dims.layout(mask);
    let mut values = Vec::with_capacity(layout.len());
    for (segment, range) in layout.spans() {
        let part: &[f64] = match segment {
            Segment::Text => f_t.as_slice(),
            Segment::Separator => &[SEPARATOR],
            Segment::Embedding => e.as_slice(),
            Segment::PriorVoiceprint => optional
                .prior_voiceprint
                .as_deref()
                .ok_or_else(|| DomainError::MissingSegment(segment.to_string()))?,
            Segment::PosteriorEmbedding => optional
                .posterior_embedding
                .as_ref()
                .map(Embedding::as_slice)
                .ok_or_else(|| DomainError::MissingSegment(segment.to_string()))?,
            Segment::PosteriorVoiceprint => optional
                .posterior_voiceprint
                .as_deref()
                .ok_or_else(|| DomainError::MissingSegment(segment.to_string()))?,
        };
        if part.len() != range.len() {
            return Err(DomainError::DimensionMismatch {
                segment: segment.to_string(),
                expected: range.len(),
                actual: part.len(),
            });
        }
        values.extend_from_slice(part);
    }
    StateVector::from_parts(values, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(d_t: usize, d_e: usize, d_v: usize) -> StateDims {
        StateDims { d_t, d_e, d_v }
    }

    #[test]
    fn plain_concatenation() {
        let s = flatten_state(
            &dims(2, 1, 1),
            &TextFeatures::new(vec![1.0, 2.0]).unwrap(),
            &Embedding::new(vec![3.0]).unwrap(),
            &OptionalSegments::default(),
            &SegmentMask::default(),
        )
        .unwrap();
        assert_eq!(s.as_slice(), &[1.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn prior_voiceprint_goes_after_embedding() {
        let mask = SegmentMask {
            prior_voiceprint: true,
            ..SegmentMask::default()
        };
        let s = flatten_state(
            &dims(1, 1, 1),
            &TextFeatures::new(vec![1.0]).unwrap(),
            &Embedding::new(vec![2.0]).unwrap(),
            &OptionalSegments {
                prior_voiceprint: Some(vec![9.0]),
                ..Default::default()
            },
            &mask,
        )
        .unwrap();
        assert_eq!(s.as_slice(), &[1.0, 0.0, 2.0, 9.0]);
    }

    #[test]
    fn mismatch_names_segment() {
        let err = flatten_state(
            &dims(3, 1, 1),
            &TextFeatures::new(vec![1.0, 2.0]).unwrap(),
            &Embedding::new(vec![3.0]).unwrap(),
            &OptionalSegments::default(),
            &SegmentMask::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            DomainError::DimensionMismatch {
                segment: "f_t".into(),
                expected: 3,
                actual: 2
            }
        );

        let mask = SegmentMask {
            posterior_voiceprint: true,
            ..SegmentMask::default()
        };
        let err = flatten_state(
            &dims(1, 1, 2),
            &TextFeatures::new(vec![1.0]).unwrap(),
            &Embedding::new(vec![3.0]).unwrap(),
            &OptionalSegments::default(),
            &mask,
        )
        .unwrap_err();
        assert_eq!(err, DomainError::MissingSegment("f_sv".into()));
    }

    #[test]
    fn text_can_be_masked_out() {
        let mask = SegmentMask::from_names(&["e"]).unwrap();
        let s = flatten_state(
            &dims(2, 2, 1),
            &TextFeatures::new(vec![1.0, 2.0]).unwrap(),
            &Embedding::new(vec![3.0, 4.0]).unwrap(),
            &OptionalSegments::default(),
            &mask,
        )
        .unwrap();
        assert_eq!(s.as_slice(), &[0.0, 3.0, 4.0]);
        assert_eq!(mask.tag(), "e");
    }

    #[test]
    fn unknown_segment_name() {
        assert!(matches!(
            SegmentMask::from_names(&["f_t", "pitch"]),
            Err(DomainError::UnknownSegment(_))
        ));
    }

    proptest! {
        #[test]
        fn segments_round_trip(
            d_t in 1usize..5, d_e in 1usize..5, d_v in 1usize..4,
            bits in 0u8..16, seed in prop::collection::vec(-100.0f64..100.0, 40),
        ) {
            let mask = SegmentMask {
                text: bits & 1 != 0,
                prior_voiceprint: bits & 2 != 0,
                posterior_embedding: bits & 4 != 0,
                posterior_voiceprint: bits & 8 != 0,
            };
            let dims = StateDims { d_t, d_e, d_v };
            let mut it = seed.iter().copied().cycle();
            let mut take = |n: usize| -> Vec<f64> { (0..n).map(|_| it.next().unwrap()).collect() };
            let f_t = TextFeatures::new(take(d_t)).unwrap();
            let e = Embedding::new(take(d_e)).unwrap();
            let opt = OptionalSegments {
                prior_voiceprint: Some(take(d_v)),
                posterior_embedding: Some(Embedding::new(take(d_e)).unwrap()),
                posterior_voiceprint: Some(take(d_v)),
            };
            let s = flatten_state(&dims, &f_t, &e, &opt, &mask).unwrap();
            let rebuilt = StateVector::from_parts(s.as_slice().to_vec(), dims.layout(&mask)).unwrap();
            prop_assert_eq!(&rebuilt, &s);
            prop_assert_eq!(s.segment(Segment::Embedding).unwrap(), e.as_slice());
            prop_assert_eq!(s.segment(Segment::Separator).unwrap(), &[0.0][..]);
            if mask.text {
                prop_assert_eq!(s.segment(Segment::Text).unwrap(), f_t.as_slice());
            }
            if mask.prior_voiceprint {
                prop_assert_eq!(s.segment(Segment::PriorVoiceprint).unwrap(), opt.prior_voiceprint.as_deref().unwrap());
            }
            if mask.posterior_embedding {
                prop_assert_eq!(s.segment(Segment::PosteriorEmbedding).unwrap(), opt.posterior_embedding.as_ref().unwrap().as_slice());
            }
            if mask.posterior_voiceprint {
                prop_assert_eq!(s.segment(Segment::PosteriorVoiceprint).unwrap(), opt.posterior_voiceprint.as_deref().unwrap());
            }
            let expected_len = d_e + 1
                + if mask.text { d_t } else { 0 }
                + if mask.prior_voiceprint { d_v } else { 0 }
                + if mask.posterior_embedding { d_e } else { 0 }
                + if mask.posterior_voiceprint { d_v } else { 0 };
            prop_assert_eq!(s.len(), expected_len);
        }
    }
}
