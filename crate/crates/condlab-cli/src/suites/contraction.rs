//! Contraction suite: linear convergence of the noiseless refinement
//! iteration, geometric residual decay, stationarity of the self-consistency
//! gradient at the fixed point, and single-step contraction in expectation
//! under noise.

use condlab::analysis::{estimate_contraction_rate, system_aggregated_covariance};
use condlab::{
    mc_estimate_t, refine, self_consistency_gradient, AdaptationConfig, AffineSystem,
    ConditioningState, Feature, LaggedCovarianceModel, NonlinearSystem, Result, SeedSpec,
    StreamSystems, System,
};
use nalgebra::DVector;

use crate::config::ExperimentConfig;
use crate::plot::Series;
use crate::record::{ExperimentRecord, Value};
use crate::suites::SuiteOutcome;

const RATE_TOL: f64 = 1e-9;

fn basis_offset(dim: usize) -> DVector<f64> {
    let mut b = DVector::zeros(dim);
    b[0] = 1.0;
    b
}

pub fn run(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let seed = SeedSpec::new(cfg.seed);
    let mut records = Vec::new();
    let rate = cfg.scale.abs();

    // Noiseless iteration on A = scale * I.
    let noiseless = System::Affine(AffineSystem::isotropic(
        cfg.scale,
        basis_offset(cfg.dim),
        LaggedCovarianceModel::zero(cfg.dim)?,
    )?);
    let f_star = noiseless.fixed_point(cfg.k)?;
    let f0 = Feature::zeros(cfg.dim)?;
    let systems = StreamSystems::identity_only(noiseless.clone());
    let adapt = AdaptationConfig::new(cfg.k)?.with_passes(cfg.passes.max(2))?;
    let (_, trace) = refine(
        &systems,
        &ConditioningState::identity_only(f0.clone()),
        &adapt,
        &seed.substream(1),
    )?;

    let estimate = estimate_contraction_rate(&trace, &f_star)?;
    let rate_err = (estimate.rate - rate).abs();
    records.push(
        ExperimentRecord::new("contraction", cfg.seed)
            .param("check", Value::text("fitted_rate_noiseless"))
            .param("scale", Value::Float(cfg.scale))
            .param("passes", Value::Int(adapt.passes() as i64))
            .param("d", Value::Int(cfg.dim as i64))
            .result("fitted_rate", Value::Float(estimate.rate))
            .result("analytic_rate", Value::Float(rate))
            .result("abs_error", Value::Float(rate_err))
            .result("tolerance", Value::Float(RATE_TOL))
            .passed(rate_err <= RATE_TOL),
    );

    // ||f^(k) - f*|| <= rate^k ||f^(0) - f*||, exact for isotropic maps.
    let e0 = (f0.vector() - f_star.vector()).norm();
    let mut worst_decay_err: f64 = 0.0;
    for (k, state) in trace.iterates().iter().enumerate() {
        let ek = (state.identity().vector() - f_star.vector()).norm();
        worst_decay_err = worst_decay_err.max((ek - rate.powi(k as i32) * e0).abs());
    }
    records.push(
        ExperimentRecord::new("contraction", cfg.seed)
            .param("check", Value::text("geometric_error_decay"))
            .param("scale", Value::Float(cfg.scale))
            .param("d", Value::Int(cfg.dim as i64))
            .result("max_abs_error", Value::Float(worst_decay_err))
            .result("analytic_rate", Value::Float(rate))
            .result("tolerance", Value::Float(1e-12 * e0.max(1.0)))
            .passed(worst_decay_err <= 1e-12 * e0.max(1.0)),
    );

    // Residuals shrink by the contraction factor and never increase.
    let residuals = trace.residuals();
    let mut worst_ratio_err: f64 = 0.0;
    let mut monotone = true;
    for w in residuals.windows(2) {
        if w[0] > 0.0 {
            worst_ratio_err = worst_ratio_err.max((w[1] / w[0] - rate).abs());
            if w[1] > w[0] * (1.0 + 1e-12) {
                monotone = false;
            }
        }
    }
    records.push(
        ExperimentRecord::new("contraction", cfg.seed)
            .param("check", Value::text("residual_ratio"))
            .param("scale", Value::Float(cfg.scale))
            .result("max_ratio_error", Value::Float(worst_ratio_err))
            .result("analytic_rate", Value::Float(rate))
            .result("tolerance", Value::Float(RATE_TOL))
            .passed(worst_ratio_err <= RATE_TOL),
    );
    records.push(
        ExperimentRecord::new("contraction", cfg.seed)
            .param("check", Value::text("residuals_nonincreasing"))
            .param("scale", Value::Float(cfg.scale))
            .result("monotone", Value::Bool(monotone))
            .result("analytic_reference", Value::text("contractive map"))
            .passed(monotone),
    );

    // Self-consistency gradient vanishes at the closed-form fixed point,
    // for the contractive system and an expansive one.
    for (label, scale) in [("contractive", cfg.scale), ("expansive", 2.0)] {
        let sys = System::Affine(AffineSystem::isotropic(
            scale,
            basis_offset(cfg.dim),
            LaggedCovarianceModel::zero(cfg.dim)?,
        )?);
        let fp = sys.fixed_point(cfg.k)?;
        let grad_norm = self_consistency_gradient(&sys, &fp, cfg.k)?.norm();
        records.push(
            ExperimentRecord::new("contraction", cfg.seed)
                .param("check", Value::text("stationarity_at_fixed_point"))
                .param("system", Value::text(label))
                .param("scale", Value::Float(scale))
                .result("gradient_norm", Value::Float(grad_norm))
                .result("tolerance", Value::Float(1e-10))
                .passed(grad_norm <= 1e-10),
        );
    }

    // Stochastic single step contracts in expectation:
    // ||mean(T_hat(f0)) - f*|| <= rate * ||f0 - f*|| + 3 SE.
    let noisy = System::Affine(AffineSystem::isotropic(
        cfg.scale,
        basis_offset(cfg.dim),
        LaggedCovarianceModel::isotropic(cfg.dim, cfg.sigma2, cfg.rho)?,
    )?);
    let agg = system_aggregated_covariance(&noisy, cfg.k)?;
    let mut mean = DVector::zeros(cfg.dim);
    for i in 0..cfg.trials {
        let est = mc_estimate_t(&noisy, &f0, cfg.k, &seed.substream(2).trial(i as u64))?;
        mean += est.vector();
    }
    mean /= cfg.trials as f64;
    let lhs = (&mean - f_star.vector()).norm();
    let contraction_bound = rate * (f0.vector() - f_star.vector()).norm();
    let se = (agg.trace() / cfg.trials as f64).sqrt();
    records.push(
        ExperimentRecord::new("contraction", cfg.seed)
            .param("check", Value::text("expected_single_step_contraction"))
            .param("scale", Value::Float(cfg.scale))
            .param("k", Value::Int(cfg.k as i64))
            .param("rho", Value::Float(cfg.rho))
            .param("sigma2", Value::Float(cfg.sigma2))
            .param("trials", Value::Int(cfg.trials as i64))
            .result("mean_distance", Value::Float(lhs))
            .result("analytic_bound", Value::Float(contraction_bound))
            .result("slack_3se", Value::Float(3.0 * se))
            .passed(lhs <= contraction_bound + 3.0 * se),
    );

    // Nonlinear family: the fitted rate stays below the certified product
    // c * ||W||_2 = 0.72. The fixed point comes from a long iteration.
    let nonlinear = System::Nonlinear(NonlinearSystem::seeded(
        cfg.dim,
        0.9,
        0.8,
        basis_offset(cfg.dim) * 0.2,
        LaggedCovarianceModel::zero(cfg.dim)?,
        cfg.seed ^ 0x5eed,
    )?);
    let nl_systems = StreamSystems::identity_only(nonlinear);
    let start = ConditioningState::identity_only(Feature::new(basis_offset(cfg.dim) * 2.0)?);
    let deep = AdaptationConfig::new(1)?.with_passes(200)?;
    let (converged, _) = refine(&nl_systems, &start, &deep, &seed.substream(3))?;
    let nl_star = converged.identity().clone();
    let short = AdaptationConfig::new(1)?.with_passes(8)?;
    let (_, nl_trace) = refine(&nl_systems, &start, &short, &seed.substream(3))?;
    let nl_rate = estimate_contraction_rate(&nl_trace, &nl_star)?;
    records.push(
        ExperimentRecord::new("contraction", cfg.seed)
            .param("check", Value::text("nonlinear_rate_bound"))
            .param("gain", Value::Float(0.8))
            .param("w_norm", Value::Float(0.9))
            .result("fitted_rate", Value::Float(nl_rate.rate))
            .result("analytic_bound", Value::Float(0.72))
            .result("tolerance", Value::Float(0.02))
            .passed(nl_rate.rate <= 0.72 + 0.02),
    );

    // Residual trajectory for the plot, measured against the analytic decay.
    let measured: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .map(|(k, r)| (k as f64, *r))
        .collect();
    let analytic: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .map(|(k, _)| (k as f64, residuals[0] * rate.powi(k as i32)))
        .collect();

    Ok(SuiteOutcome {
        records,
        series: vec![
            Series::new("measured residual", measured),
            Series::new("analytic geometric decay", analytic),
        ],
        x_label: "pass".into(),
        y_label: "residual ||f - T_hat(f)||".into(),
    })
}
