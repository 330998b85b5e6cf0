//! Lagged covariance of per-frame feature noise.
//!
//! The single noise family is a stationary vector AR(1): the lag-tau
//! covariance is `Gamma_tau = rho^tau * Gamma_0` with `rho in [0, 1)`.
//! Sampling uses `eps_1 ~ N(0, Gamma_0)` and
//! `eps_{t+1} = rho * eps_t + sqrt(1 - rho^2) * w_t`, `w_t ~ N(0, Gamma_0)`,
//! which realises the lagged covariances exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::seed::NormalSource;

const PSD_TOL: f64 = 1e-10;

/// The family `{Gamma_tau}` of lag-tau covariances, parameterised by
/// `Gamma_0` (symmetric PSD) and the AR(1) correlation `rho`.
#[derive(Debug, Clone)]
pub struct LaggedCovarianceModel {
    gamma0: DMatrix<f64>,
    rho: f64,
    // Gamma_0 = factor * factor^T; eigen square root, valid for singular PSD.
    factor: DMatrix<f64>,
}

impl LaggedCovarianceModel {
    pub fn new(gamma0: DMatrix<f64>, rho: f64) -> Result<Self> {
        if gamma0.nrows() != gamma0.ncols() || gamma0.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "gamma0 must be a nonempty square matrix".into(),
            ));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in [0, 1), got {rho}"
            )));
        }
        if gamma0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "gamma0 entries must be finite".into(),
            ));
        }
        let scale = gamma0.amax().max(1.0);
        for i in 0..gamma0.nrows() {
            for j in 0..i {
                if (gamma0[(i, j)] - gamma0[(j, i)]).abs() > PSD_TOL * scale {
                    return Err(Error::InvalidArgument("gamma0 must be symmetric".into()));
                }
            }
        }
        let eigen = gamma0.clone().symmetric_eigen();
        if eigen.eigenvalues.iter().any(|&l| l < -PSD_TOL * scale) {
            return Err(Error::InvalidArgument(
                "gamma0 must be positive semidefinite".into(),
            ));
        }
        let sqrt_vals = DVector::from_iterator(
            eigen.eigenvalues.len(),
            eigen.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
        );
        let factor = &eigen.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
        Ok(Self {
            gamma0,
            rho,
            factor,
        })
    }

    /// `Gamma_0 = sigma2 * I_d`.
    pub fn isotropic(dim: usize, sigma2: f64, rho: f64) -> Result<Self> {
        if sigma2 < 0.0 || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be finite and >= 0, got {sigma2}"
            )));
        }
        Self::new(DMatrix::identity(dim, dim) * sigma2, rho)
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(dim, dim), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.gamma0.nrows()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn gamma0(&self) -> &DMatrix<f64> {
        &self.gamma0
    }

    /// `Gamma_tau = rho^tau * Gamma_0`.
    pub fn lagged(&self, tau: usize) -> DMatrix<f64> {
        &self.gamma0 * self.rho.powi(tau as i32)
    }

    pub(crate) fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// True when the model produces no noise at all.
    pub fn is_zero(&self) -> bool {
        self.gamma0.iter().all(|&v| v == 0.0)
    }
}

/// Stateful AR(1) sampler. Frame `t` consumes exactly `dim` standard normals
/// from the source handed to `next`, so per-frame sub-streams stay aligned.
#[derive(Debug, Clone)]
pub struct Ar1Sampler<'m> {
    model: &'m LaggedCovarianceModel,
    prev: Option<DVector<f64>>,
}

impl<'m> Ar1Sampler<'m> {
    pub fn new(model: &'m LaggedCovarianceModel) -> Self {
        Self { model, prev: None }
    }

    pub fn next(&mut self, source: &mut NormalSource) -> DVector<f64> {
        let z = source.standard_normal_vector(self.model.dim());
        let innovation = self.model.factor() * z;
        let eps = match &self.prev {
            None => innovation,
            Some(p) => {
                let rho = self.model.rho;
                p * rho + innovation * (1.0 - rho * rho).sqrt()
            }
        };
        self.prev = Some(eps.clone());
        eps
    }
}
