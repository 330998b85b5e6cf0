//! Feature vectors and feature sequences.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A d-dimensional conditioning/identity feature. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    values: DVector<f64>,
}

impl Feature {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "feature dimension must be >= 1".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature entries must be finite".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    /// Bitwise equality, used by reproducibility and isolation checks.
    pub fn bits_eq(&self, other: &Feature) -> bool {
        self.dim() == other.dim()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Encoded features of a generated sequence, one per frame. Never empty and
/// dimensionally uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<Feature>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Feature>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| {
            Error::InvalidArgument("sequence must contain at least one frame".into())
        })?;
        let dim = first.dim();
        for f in &frames {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: f.dim(),
                });
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn frames(&self) -> &[Feature] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Feature {
        &self.frames[t]
    }
}

/// Mean of the first `first_k` frames: (1/K) * sum_{t=1..K} f_t.
pub fn feature_mean(seq: &FeatureSequence, first_k: usize) -> Result<Feature> {
    if first_k == 0 {
        return Err(Error::InvalidArgument("first_k must be >= 1".into()));
    }
    if first_k > seq.len() {
        return Err(Error::InvalidArgument(format!(
            "first_k = {} exceeds sequence length {}",
            first_k,
            seq.len()
        )));
    }
    let mut acc = DVector::zeros(seq.dim());
    for frame in &seq.frames[..first_k] {
        acc += frame.vector();
    }
    Feature::new(acc / first_k as f64)
}

/// Cosine of the angle between two nonzero features, clamped to [-1, 1].
pub fn cosine_similarity(a: &Feature, b: &Feature) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine similarity is undefined for a zero vector".into(),
        ));
    }
    Ok((a.vector().dot(b.vector()) / (na * nb)).clamp(-1.0, 1.0))
}
