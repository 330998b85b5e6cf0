//! Seeded experiment suites. Each suite returns flat records with pass/fail
//! flags plus line-plot series.

pub mod bias_variance;
pub mod bound;
pub mod contraction;
pub mod covariance;
pub mod k_sweep;
pub mod pipeline;

use condlab::{Feature, Result, SeedSpec};
use nalgebra::DVector;

use crate::config::{ExperimentConfig, Suite};
use crate::plot::Series;
use crate::record::ExperimentRecord;

pub struct SuiteOutcome {
    pub records: Vec<ExperimentRecord>,
    pub series: Vec<Series>,
    pub x_label: String,
    pub y_label: String,
}

pub fn run(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    match cfg.suite {
        Suite::Covariance => covariance::run(cfg),
        Suite::Contraction => contraction::run(cfg),
        Suite::Bound => bound::run(cfg),
        Suite::BiasVariance => bias_variance::run(cfg),
        Suite::KSweep => k_sweep::run(cfg),
        Suite::Pipeline => pipeline::run(cfg),
    }
}

/// Deterministic unit vector derived from a seed node.
pub fn seeded_unit(dim: usize, seed: &SeedSpec) -> DVector<f64> {
    let mut src = seed.source();
    loop {
        let v = src.standard_normal_vector(dim);
        let norm = v.norm();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

/// Deterministic feature of the requested norm.
pub fn seeded_feature(dim: usize, norm: f64, seed: &SeedSpec) -> Result<Feature> {
    Feature::new(seeded_unit(dim, seed) * norm)
}
