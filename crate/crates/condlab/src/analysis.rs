//! Closed forms and empirical verifiers for the statistical claims about
//! aggregated features: the lag-weighted covariance of the K-frame mean, the
//! Lipschitz output-variance bound, the linear contraction rate of the
//! refinement iteration, the exact bias-variance decomposition for
//! constant-Jacobian systems, and the optimal aggregation window.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feature::{feature_mean, Feature};
use crate::noise::{Ar1Sampler, LaggedCovarianceModel};
use crate::refine::RefinementTrace;
use crate::seed::{SeedSpec, KIND_SYSTEM_NOISE};
use crate::system::System;

/// Covariance of the K-frame mean of an AR(1) noise process:
///
/// ```text
/// Cov(fbar) = (1/K) * (Gamma_0 + 2 * sum_{tau=1..K-1} (1 - tau/K) * Gamma_tau)
/// ```
pub fn aggregated_covariance(model: &LaggedCovarianceModel, frames: usize) -> Result<DMatrix<f64>> {
    if frames == 0 {
        return Err(Error::InvalidArgument(
            "frames aggregated must be >= 1".into(),
        ));
    }
    let k = frames as f64;
    let mut acc = model.gamma0().clone();
    if model.rho() > 0.0 {
        for tau in 1..frames {
            let weight = 2.0 * (1.0 - tau as f64 / k) * model.rho().powi(tau as i32);
            acc += model.gamma0() * weight;
        }
    }
    Ok(acc / k)
}

/// Total aggregated covariance of a system's per-frame feature noise,
/// summed over its AR(1) components.
pub fn system_aggregated_covariance(system: &System, frames: usize) -> Result<DMatrix<f64>> {
    let mut total = DMatrix::zeros(system.dim(), system.dim());
    for component in system.noise_components()? {
        total += aggregated_covariance(&component, frames)?;
    }
    Ok(total)
}

/// Sample covariance (unbiased, divisor `M - 1`) of the K-frame mean across
/// `trials` independent generations conditioned on `f`.
pub fn empirical_aggregated_covariance(
    system: &System,
    f: &Feature,
    frames: usize,
    trials: usize,
    seed: &SeedSpec,
) -> Result<DMatrix<f64>> {
    if trials < 2 {
        return Err(Error::InvalidArgument(
            "at least two trials are required".into(),
        ));
    }
    let d = system.dim();
    let mut means = Vec::with_capacity(trials);
    for i in 0..trials {
        let seq = system.generate(f, frames, &seed.trial(i as u64))?;
        means.push(feature_mean(&seq, frames)?.into_vector());
    }
    let mut center = DVector::zeros(d);
    for m in &means {
        center += m;
    }
    center /= trials as f64;
    let mut cov = DMatrix::zeros(d, d);
    for m in &means {
        let dev = m - &center;
        cov += &dev * dev.transpose();
    }
    Ok(cov / (trials - 1) as f64)
}

/// Draw `fbar - mu` for one trial: every noise component is run for `frames`
/// steps and averaged.
fn sample_aggregated_deviation(
    components: &[LaggedCovarianceModel],
    frames: usize,
    trial: &SeedSpec,
) -> DVector<f64> {
    let d = components[0].dim();
    let mut dev = DVector::zeros(d);
    for (ci, component) in components.iter().enumerate() {
        if component.is_zero() {
            continue;
        }
        let sub = trial.substream(ci as u64);
        let mut sampler = Ar1Sampler::new(component);
        let mut acc = DVector::zeros(d);
        for t in 1..=frames {
            let mut src = sub.frame_source(KIND_SYSTEM_NOISE, t);
            acc += sampler.next(&mut src);
        }
        dev += acc / frames as f64;
    }
    dev
}

/// Result of the output-variance bound check.
#[derive(Debug, Clone, Copy)]
pub struct VarianceBound {
    /// `L_G^2 * tr(cov_agg)`.
    pub bound: f64,
    /// Monte Carlo estimate of `E ||G(fbar) - G(mu)||^2`.
    pub empirical: f64,
    /// Standard error of the estimate.
    pub empirical_se: f64,
}

/// Verify `E ||G(fbar) - G(mu)||^2 <= L_G^2 * tr(Cov(fbar))` by sampling
/// aggregated deviations around `mu` from the system's noise components and
/// pushing them through the deterministic output map.
pub fn output_variance_bound(
    system: &System,
    mu: &Feature,
    cov_agg: &DMatrix<f64>,
    frames: usize,
    trials: usize,
    seed: &SeedSpec,
) -> Result<VarianceBound> {
    if frames == 0 || trials < 2 {
        return Err(Error::InvalidArgument(
            "frames and trials must both be >= 2 (frames >= 1)".into(),
        ));
    }
    if cov_agg.nrows() != system.dim() || cov_agg.ncols() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            actual: cov_agg.nrows(),
        });
    }
    // PSD validation shares the covariance-model check.
    LaggedCovarianceModel::new(cov_agg.clone(), 0.0)?;

    let lipschitz = system.lipschitz_constant();
    let bound = lipschitz * lipschitz * cov_agg.trace();

    let components = system.noise_components()?;
    let base = system.output_map(mu.vector())?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..trials {
        let dev = sample_aggregated_deviation(&components, frames, &seed.trial(i as u64));
        let out = system.output_map(&(mu.vector() + dev))?;
        let e = (out - &base).norm_squared();
        sum += e;
        sum_sq += e * e;
    }
    let m = trials as f64;
    let empirical = sum / m;
    let var = (sum_sq - sum * sum / m) / (m - 1.0);
    Ok(VarianceBound {
        bound,
        empirical,
        empirical_se: (var.max(0.0) / m).sqrt(),
    })
}

/// Fitted linear convergence rate of a refinement trace.
#[derive(Debug, Clone, Copy)]
pub struct ContractionEstimate {
    /// `exp` of the least-squares slope of `ln ||f^(k) - f*||` against `k`.
    pub rate: f64,
    /// Set when an iterate hits the fixed point exactly; the rate is then 0.
    pub converged: bool,
}

/// Least-squares estimate of the contraction rate from iterate distances to
/// a known fixed point.
pub fn estimate_contraction_rate(
    trace: &RefinementTrace,
    f_star: &Feature,
) -> Result<ContractionEstimate> {
    let errors: Vec<f64> = trace
        .iterates()
        .iter()
        .map(|state| (state.identity().vector() - f_star.vector()).norm())
        .collect();
    if errors.len() < 3 {
        return Err(Error::InvalidArgument(
            "rate estimation needs at least three iterates".into(),
        ));
    }
    if errors.contains(&0.0) {
        return Ok(ContractionEstimate {
            rate: 0.0,
            converged: true,
        });
    }
    let n = errors.len() as f64;
    let k_mean = (n - 1.0) / 2.0;
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, yk) in y.iter().enumerate() {
        let dk = k as f64 - k_mean;
        num += dk * (yk - y_mean);
        den += dk * dk;
    }
    Ok(ContractionEstimate {
        rate: (num / den).exp(),
        converged: false,
    })
}

/// Exact bias-variance decomposition of `E ||G(fbar) - G(mu)||^2` for
/// constant-Jacobian systems, plus its Monte Carlo counterpart.
#[derive(Debug, Clone, Copy)]
pub struct BiasVarianceReport {
    /// `||J (mu_K - mu)||^2` with `mu_K - mu = delta * (K-1)/2` under linear
    /// drift, anchored at the first-frame mean.
    pub bias_sq: f64,
    /// `tr(J Cov(fbar) J^T)`.
    pub variance: f64,
    /// `bias_sq + variance`.
    pub total: f64,
    /// Monte Carlo estimate of the left-hand side.
    pub empirical_total: f64,
    /// Standard error of the estimate.
    pub empirical_se: f64,
}

/// Decompose the expected squared output deviation of the K-frame aggregate
/// around the first-frame mean `mu = E[f_1]`. Exact for the affine and
/// pipeline families, whose output maps are affine in the feature.
pub fn bias_variance_decompose(
    system: &System,
    f: &Feature,
    frames: usize,
    trials: usize,
    seed: &SeedSpec,
) -> Result<BiasVarianceReport> {
    if frames == 0 || trials < 2 {
        return Err(Error::InvalidArgument(
            "frames must be >= 1 and trials >= 2".into(),
        ));
    }
    let jacobian = system.output_jacobian()?;
    let drift = system.drift_vector();
    let mean_shift = &drift * ((frames as f64 - 1.0) / 2.0);
    let bias_sq = (&jacobian * mean_shift).norm_squared();
    let cov = system_aggregated_covariance(system, frames)?;
    let variance = (&jacobian * cov * jacobian.transpose()).trace();
    let total = bias_sq + variance;

    let mu = system.expected_frame(f, 1)?;
    let base = system.output_map(mu.vector())?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..trials {
        let seq = system.generate(f, frames, &seed.trial(i as u64))?;
        let fbar = feature_mean(&seq, frames)?;
        let out = system.output_map(fbar.vector())?;
        let e = (out - &base).norm_squared();
        sum += e;
        sum_sq += e * e;
    }
    let m = trials as f64;
    let empirical_total = sum / m;
    let var = (sum_sq - sum * sum / m) / (m - 1.0);
    Ok(BiasVarianceReport {
        bias_sq,
        variance,
        total,
        empirical_total,
        empirical_se: (var.max(0.0) / m).sqrt(),
    })
}

/// Analytic objective `sigma^2 / K + Bias(K)^2` evaluated over `1..=K_max`.
#[derive(Debug, Clone)]
pub struct ObjectiveCurve {
    /// `(K, objective value)` pairs in ascending K.
    pub values: Vec<(usize, f64)>,
    /// Argmin; ties break toward smaller K.
    pub k_star: usize,
}

/// Evaluate the optimal-window objective for a scalar per-frame variance and
/// a bias magnitude function.
pub fn optimal_k(sigma2: f64, bias: impl Fn(usize) -> f64, k_max: usize) -> Result<ObjectiveCurve> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be >= 1".into()));
    }
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be finite and >= 0, got {sigma2}"
        )));
    }
    let mut values = Vec::with_capacity(k_max);
    let mut k_star = 1;
    let mut best = f64::INFINITY;
    for k in 1..=k_max {
        let b = bias(k);
        let objective = sigma2 / k as f64 + b * b;
        if objective < best {
            best = objective;
            k_star = k;
        }
        values.push((k, objective));
    }
    Ok(ObjectiveCurve { values, k_star })
}

/// One row of a K sweep.
#[derive(Debug, Clone, Copy)]
pub struct KSweepEntry {
    pub frames: usize,
    pub bias_sq: f64,
    pub variance: f64,
    pub total: f64,
    pub empirical_total: f64,
    pub empirical_se: f64,
}

/// Full analytic and empirical sweep over aggregation windows.
#[derive(Debug, Clone)]
pub struct KSweepResult {
    pub entries: Vec<KSweepEntry>,
    pub k_star_analytic: usize,
    pub k_star_empirical: usize,
}

/// Sweep `K = 1..=k_max` on a constant-Jacobian system, reporting the
/// analytic decomposition and the Monte Carlo total for each window.
pub fn k_sweep(
    system: &System,
    f: &Feature,
    k_max: usize,
    trials: usize,
    seed: &SeedSpec,
) -> Result<KSweepResult> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be >= 1".into()));
    }
    let mut entries = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let report = bias_variance_decompose(system, f, k, trials, &seed.substream(k as u64))?;
        entries.push(KSweepEntry {
            frames: k,
            bias_sq: report.bias_sq,
            variance: report.variance,
            total: report.total,
            empirical_total: report.empirical_total,
            empirical_se: report.empirical_se,
        });
    }
    let argmin = |select: fn(&KSweepEntry) -> f64| {
        let mut best_k = 1;
        let mut best = f64::INFINITY;
        for e in &entries {
            if select(e) < best {
                best = select(e);
                best_k = e.frames;
            }
        }
        best_k
    };
    Ok(KSweepResult {
        k_star_analytic: argmin(|e| e.total),
        k_star_empirical: argmin(|e| e.empirical_total),
        entries,
    })
}
