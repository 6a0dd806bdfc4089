//! In-memory record types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, NUM_CLASSES};

/// One annotator's vote on one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub annotator_id: String,
    pub vote: EmotionLabel,
}

impl AnnotationRecord {
    pub fn new(sample_id: &str, annotator_id: &str, vote: EmotionLabel) -> Result<Self> {
        if sample_id.is_empty() || annotator_id.is_empty() {
            return Err(Error::Malformed("empty sample or annotator id".into()));
        }
        if !vote.is_class() {
            return Err(Error::XVote(sample_id.to_string()));
        }
        Ok(AnnotationRecord {
            sample_id: sample_id.to_string(),
            annotator_id: annotator_id.to_string(),
            vote,
        })
    }
}

/// A `T x D` matrix of encoder outputs for one sample, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    sample_id: String,
    frames: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureSequence {
    /// Builds a sequence from row-major values, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(sample_id: impl Into<String>, frames: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        let sample_id = sample_id.into();
        if frames == 0 || dim == 0 {
            return Err(Error::InvalidSequence(format!(
                "{sample_id}: shape {frames}x{dim} has an empty axis"
            )));
        }
        if values.len() != frames * dim {
            return Err(Error::InvalidSequence(format!(
                "{sample_id}: {} values for shape {frames}x{dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSequence(format!("{sample_id}: non-finite value")));
        }
        Ok(FeatureSequence {
            sample_id,
            frames,
            dim,
            values,
        })
    }

    pub fn from_rows(sample_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidSequence("ragged rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(sample_id, rows.len(), dim, values)
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    /// Number of frames `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

/// A sample as seen by the trainer: one feature stream per encoder plus an
/// optional reference label.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub streams: Vec<FeatureSequence>,
    pub label: Option<EmotionLabel>,
}

impl SampleRecord {
    pub fn new(streams: Vec<FeatureSequence>, label: Option<EmotionLabel>) -> Result<Self> {
        let first = streams
            .first()
            .ok_or_else(|| Error::InvalidSequence("sample without streams".into()))?;
        let sample_id = first.sample_id().to_string();
        if let Some(other) = streams.iter().find(|s| s.sample_id() != sample_id) {
            return Err(Error::SampleMismatch(other.sample_id().to_string()));
        }
        Ok(SampleRecord {
            sample_id,
            streams,
            label,
        })
    }

    pub fn stream_dims(&self) -> Vec<usize> {
        self.streams.iter().map(FeatureSequence::dim).collect()
    }
}

/// Zips per-stream containers (all in the same sample order) into samples.
pub fn zip_streams(streams: Vec<Vec<FeatureSequence>>) -> Result<Vec<SampleRecord>> {
    let Some(n) = streams.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    if let Some(bad) = streams.iter().find(|s| s.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let mut iters: Vec<_> = streams.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let seqs = iters.iter_mut().map(|it| it.next().unwrap()).collect();
        out.push(SampleRecord::new(seqs, None)?);
    }
    Ok(out)
}

/// Checks that every sample has the same stream count and per-stream `D`.
pub fn uniform_stream_dims(samples: &[SampleRecord]) -> Result<Vec<usize>> {
    let dims = samples.first().ok_or(Error::EmptyDataset)?.stream_dims();
    for s in samples {
        let d = s.stream_dims();
        if d.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: d.len(),
            });
        }
        if let Some((e, g)) = dims.iter().zip(&d).find(|(e, g)| e != g) {
            return Err(Error::DimensionMismatch { expected: *e, got: *g });
        }
    }
    Ok(dims)
}

/// Tolerance on the sum of a posterior.
pub const POSTERIOR_SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over the eight classes in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorVector([f64; NUM_CLASSES]);

impl PosteriorVector {
    pub fn new(probs: [f64; NUM_CLASSES]) -> Result<Self> {
        let in_range = probs.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p));
        let sum: f64 = probs.iter().sum();
        if !in_range || (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
            return Err(Error::InvalidPosterior(format!("{probs:?}")));
        }
        Ok(PosteriorVector(probs))
    }

    pub fn uniform() -> Self {
        PosteriorVector([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    /// Most probable class; ties go to the lowest canonical index.
    pub fn argmax(&self) -> EmotionLabel {
        EmotionLabel::from_index(argmax(&self.0)).expect("index < NUM_CLASSES")
    }
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_rejects_bad_shapes() {
        assert!(FeatureSequence::new("a", 0, 3, vec![]).is_err());
        assert!(FeatureSequence::new("a", 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureSequence::new("a", 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(FeatureSequence::new("a", 1, 2, vec![0.0, f64::INFINITY]).is_err());
        let s = FeatureSequence::from_rows("a", &[vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(s.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(s.rows().count(), 2);
    }

    #[test]
    fn annotation_rejects_x_vote() {
        assert!(matches!(
            AnnotationRecord::new("s", "a", EmotionLabel::NoConsensus),
            Err(Error::XVote(_))
        ));
        assert!(AnnotationRecord::new("", "a", EmotionLabel::Anger).is_err());
    }

    #[test]
    fn posterior_validation() {
        assert!(PosteriorVector::new([0.125; 8]).is_ok());
        assert!(PosteriorVector::new([0.2; 8]).is_err());
        let mut p = [0.0; 8];
        p[3] = 1.0;
        assert_eq!(PosteriorVector::new(p).unwrap().argmax(), EmotionLabel::Fear);
        assert_eq!(PosteriorVector::uniform().argmax(), EmotionLabel::Anger);
    }

    #[test]
    fn zip_checks_ids() {
        let a = FeatureSequence::new("s1", 1, 1, vec![1.0]).unwrap();
        let b = FeatureSequence::new("s2", 1, 1, vec![1.0]).unwrap();
        assert!(zip_streams(vec![vec![a.clone()], vec![b]]).is_err());
        let z = zip_streams(vec![vec![a.clone()], vec![a]]).unwrap();
        assert_eq!(z[0].stream_dims(), vec![1, 1]);
    }
}
