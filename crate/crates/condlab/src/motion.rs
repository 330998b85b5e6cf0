//! Driving-signal model: zero-mean jitter plus a linear-in-time mean shift.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::seed::{NormalSource, SeedSpec, KIND_MOTION};

/// Parameters of the motion process `a_t = noise_scale * z_t + beta * t * u`,
/// with `z_t ~ N(0, I_m)` i.i.d. across frames.
#[derive(Debug, Clone)]
pub struct MotionModel {
    noise_scale: f64,
    drift_rate: f64,
    mean_shift: DVector<f64>,
}

impl MotionModel {
    pub fn new(noise_scale: f64, drift_rate: f64, mean_shift: DVector<f64>) -> Result<Self> {
        if mean_shift.is_empty() {
            return Err(Error::InvalidArgument(
                "motion dimension must be >= 1".into(),
            ));
        }
        if noise_scale < 0.0 || !noise_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "motion noise scale must be finite and >= 0, got {noise_scale}"
            )));
        }
        if !drift_rate.is_finite() || mean_shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("motion drift must be finite".into()));
        }
        Ok(Self {
            noise_scale,
            drift_rate,
            mean_shift,
        })
    }

    /// Stationary process: no drift, optional jitter.
    pub fn stationary(dim: usize, noise_scale: f64) -> Result<Self> {
        Self::new(noise_scale, 0.0, DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.mean_shift.len()
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn drift_rate(&self) -> f64 {
        self.drift_rate
    }

    pub fn mean_shift(&self) -> &DVector<f64> {
        &self.mean_shift
    }

    /// `E[a_t] = beta * t * u`.
    pub fn expected_input(&self, t: usize) -> DVector<f64> {
        &self.mean_shift * (self.drift_rate * t as f64)
    }

    /// Input at frame `t` (1-based) given that frame's noise source.
    pub(crate) fn input_at(&self, t: usize, source: &mut NormalSource) -> DVector<f64> {
        let mut a = self.expected_input(t);
        if self.noise_scale > 0.0 {
            a += source.standard_normal_vector(self.dim()) * self.noise_scale;
        }
        a
    }

    /// Realise the process for `len` frames.
    pub fn sample(&self, len: usize, seed: &SeedSpec) -> Result<MotionSequence> {
        if len == 0 {
            return Err(Error::InvalidArgument("motion length must be >= 1".into()));
        }
        let inputs = (1..=len)
            .map(|t| {
                let mut src = seed.frame_source(KIND_MOTION, t);
                self.input_at(t, &mut src)
            })
            .collect();
        MotionSequence::new(inputs, self.mean_shift.clone(), self.drift_rate)
    }
}

/// A realised driving sequence together with the drift parameters that
/// produced it.
#[derive(Debug, Clone)]
pub struct MotionSequence {
    inputs: Vec<DVector<f64>>,
    mean_shift: DVector<f64>,
    drift_rate: f64,
}

impl MotionSequence {
    pub fn new(
        inputs: Vec<DVector<f64>>,
        mean_shift: DVector<f64>,
        drift_rate: f64,
    ) -> Result<Self> {
        let dim = mean_shift.len();
        if inputs.is_empty() {
            return Err(Error::InvalidArgument(
                "motion sequence must be nonempty".into(),
            ));
        }
        for a in &inputs {
            if a.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: a.len(),
                });
            }
        }
        Ok(Self {
            inputs,
            mean_shift,
            drift_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    /// Input for frame `t`, 1-based.
    pub fn input(&self, t: usize) -> &DVector<f64> {
        &self.inputs[t - 1]
    }

    pub fn drift_rate(&self) -> f64 {
        self.drift_rate
    }

    pub fn mean_shift(&self) -> &DVector<f64> {
        &self.mean_shift
    }
}
