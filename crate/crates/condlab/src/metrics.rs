//! Feature-space evaluation of generated sequences against a reference
//! feature, and baseline-versus-refined deltas.

use crate::error::{Error, Result};
use crate::feature::{cosine_similarity, feature_mean, Feature, FeatureSequence};

/// Per-sequence summary relative to a reference feature `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceMetrics {
    /// Mean cosine similarity of the frames to `mu`.
    pub mean_identity_sim: f64,
    /// `||feature_mean(seq) - mu||`.
    pub drift_norm: f64,
    /// `1 - mean_t min(1, ||f_{t+1} - f_t|| / (||mu|| + 1e-12))`, in [0, 1];
    /// 1 for single-frame sequences.
    pub smoothness: f64,
    /// `||f_T - mu||`.
    pub terminal_deviation: f64,
}

/// Evaluate a sequence against a nonzero reference feature.
pub fn evaluate(seq: &FeatureSequence, mu: &Feature) -> Result<SequenceMetrics> {
    if mu.dim() != seq.dim() {
        return Err(Error::DimensionMismatch {
            expected: seq.dim(),
            actual: mu.dim(),
        });
    }
    if mu.norm() == 0.0 {
        return Err(Error::DegenerateInput(
            "sequence metrics need a nonzero reference feature".into(),
        ));
    }
    let mut sim_acc = 0.0;
    for frame in seq.frames() {
        sim_acc += cosine_similarity(frame, mu)?;
    }
    let mean_identity_sim = sim_acc / seq.len() as f64;

    let drift_norm = (feature_mean(seq, seq.len())?.vector() - mu.vector()).norm();

    let smoothness = if seq.len() == 1 {
        1.0
    } else {
        let scale = mu.norm() + 1e-12;
        let mut acc = 0.0;
        for w in seq.frames().windows(2) {
            acc += ((w[1].vector() - w[0].vector()).norm() / scale).min(1.0);
        }
        (1.0 - acc / (seq.len() - 1) as f64).clamp(0.0, 1.0)
    };

    let terminal_deviation = (seq.frame(seq.len() - 1).vector() - mu.vector()).norm();

    Ok(SequenceMetrics {
        mean_identity_sim,
        drift_norm,
        smoothness,
        terminal_deviation,
    })
}

/// Signed per-field differences, refined minus baseline. Positive means
/// improvement for `mean_identity_sim` and `smoothness`; negative means
/// improvement for `drift_norm` and `terminal_deviation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsDelta {
    pub mean_identity_sim: f64,
    pub drift_norm: f64,
    pub smoothness: f64,
    pub terminal_deviation: f64,
}

impl MetricsDelta {
    pub fn identity_improved(&self) -> bool {
        self.mean_identity_sim > 0.0
    }

    pub fn drift_improved(&self) -> bool {
        self.drift_norm < 0.0
    }

    pub fn smoothness_improved(&self) -> bool {
        self.smoothness > 0.0
    }

    pub fn terminal_improved(&self) -> bool {
        self.terminal_deviation < 0.0
    }
}

/// Fieldwise `refined - baseline`.
pub fn compare(baseline: &SequenceMetrics, refined: &SequenceMetrics) -> MetricsDelta {
    MetricsDelta {
        mean_identity_sim: refined.mean_identity_sim - baseline.mean_identity_sim,
        drift_norm: refined.drift_norm - baseline.drift_norm,
        smoothness: refined.smoothness - baseline.smoothness,
        terminal_deviation: refined.terminal_deviation - baseline.terminal_deviation,
    }
}
