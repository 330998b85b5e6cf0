//! Bias-variance suite: the exact decomposition
//! `E||G(fbar) - G(mu)||^2 = ||J (mu_K - mu)||^2 + tr(J Cov(fbar) J^T)`
//! for constant-Jacobian systems, against frozen hand algebra and Monte
//! Carlo totals.

use condlab::analysis::{bias_variance_decompose, system_aggregated_covariance};
use condlab::{
    AffineSystem, Feature, LaggedCovarianceModel, LinearPipelineSystem, Result, SeedSpec, System,
};
use nalgebra::DVector;

use crate::config::{ExperimentConfig, Family};
use crate::plot::Series;
use crate::record::{ExperimentRecord, Value};
use crate::suites::{seeded_feature, seeded_unit, SuiteOutcome};

const HAND_TOL: f64 = 1e-12;

/// The fixed hand case: J = I (d = 2), mu_K - mu = (0.3, 0),
/// Cov(fbar) = 0.1 I, realised by delta = (0.2, 0), K = 4, rho = 0,
/// sigma^2 = 0.4. Frozen values: bias^2 = 0.09, variance = 0.2, total = 0.29.
fn hand_case(
    cfg: &ExperimentConfig,
    seed: &SeedSpec,
    records: &mut Vec<ExperimentRecord>,
) -> Result<()> {
    let noise = LaggedCovarianceModel::isotropic(2, 0.4, 0.0)?;
    let system = System::Affine(
        AffineSystem::isotropic(1.0, DVector::zeros(2), noise)?
            .with_drift(DVector::from_row_slice(&[0.2, 0.0]))?,
    );
    let f = Feature::from_slice(&[0.5, -0.25])?;
    let report = bias_variance_decompose(&system, &f, 4, cfg.trials, &seed.substream(1))?;
    let analytic_err = (report.bias_sq - 0.09)
        .abs()
        .max((report.variance - 0.2).abs())
        .max((report.total - 0.29).abs());
    let empirical_err = (report.empirical_total - report.total).abs();
    records.push(
        ExperimentRecord::new("bias-variance", cfg.seed)
            .param("check", Value::text("hand_case"))
            .param("family", Value::text("affine"))
            .param("k", Value::Int(4))
            .param("trials", Value::Int(cfg.trials as i64))
            .result("bias_sq", Value::Float(report.bias_sq))
            .result("variance", Value::Float(report.variance))
            .result("total", Value::Float(report.total))
            .result("analytic_reference", Value::Float(0.29))
            .result("analytic_error", Value::Float(analytic_err))
            .result("empirical_total", Value::Float(report.empirical_total))
            .result("empirical_se", Value::Float(report.empirical_se))
            .passed(analytic_err <= HAND_TOL && empirical_err <= 3.0 * report.empirical_se),
    );
    Ok(())
}

pub fn build_system(cfg: &ExperimentConfig, seed: &SeedSpec) -> Result<System> {
    let noise = LaggedCovarianceModel::isotropic(cfg.dim, cfg.sigma2, cfg.rho)?;
    Ok(match cfg.family {
        Family::LinearPipeline => System::Pipeline(LinearPipelineSystem::seeded(
            cfg.dim,
            cfg.render_dim,
            cfg.motion_dim,
            noise,
            cfg.motion_noise,
            cfg.drift,
            cfg.seed ^ 0xD1,
        )?),
        Family::Affine => System::Affine(
            AffineSystem::isotropic(cfg.scale, DVector::zeros(cfg.dim), noise)?
                .with_drift(seeded_unit(cfg.dim, &seed.substream(0xD2)) * cfg.drift)?,
        ),
        Family::Nonlinear => unreachable!("rejected during configuration"),
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let seed = SeedSpec::new(cfg.seed);
    let mut records = Vec::new();

    hand_case(cfg, &seed, &mut records)?;

    // The configured system, at the configured window and with drift off.
    let system = build_system(cfg, &seed)?;
    let f = seeded_feature(cfg.dim, 5.0, &seed.substream(2))?;
    let report = bias_variance_decompose(&system, &f, cfg.k, cfg.trials, &seed.substream(3))?;
    let empirical_err = (report.empirical_total - report.total).abs();
    records.push(
        ExperimentRecord::new("bias-variance", cfg.seed)
            .param("check", Value::text("configured_system"))
            .param("family", Value::text(cfg.family.as_str()))
            .param("k", Value::Int(cfg.k as i64))
            .param("drift", Value::Float(cfg.drift))
            .param("rho", Value::Float(cfg.rho))
            .param("sigma2", Value::Float(cfg.sigma2))
            .param("trials", Value::Int(cfg.trials as i64))
            .result("bias_sq", Value::Float(report.bias_sq))
            .result("variance", Value::Float(report.variance))
            .result("total", Value::Float(report.total))
            .result("empirical_total", Value::Float(report.empirical_total))
            .result("empirical_se", Value::Float(report.empirical_se))
            .passed(empirical_err <= 3.0 * report.empirical_se),
    );

    let driftless_cfg = ExperimentConfig {
        drift: 0.0,
        ..cfg.clone()
    };
    let driftless = build_system(&driftless_cfg, &seed)?;
    let null = bias_variance_decompose(&driftless, &f, cfg.k, cfg.trials, &seed.substream(4))?;
    records.push(
        ExperimentRecord::new("bias-variance", cfg.seed)
            .param("check", Value::text("zero_drift_has_no_bias"))
            .param("family", Value::text(cfg.family.as_str()))
            .param("k", Value::Int(cfg.k as i64))
            .param("drift", Value::Float(0.0))
            .result("bias_sq", Value::Float(null.bias_sq))
            .result("total", Value::Float(null.total))
            .result("variance", Value::Float(null.variance))
            .result("analytic_reference", Value::text("total == variance"))
            .passed(null.bias_sq == 0.0 && null.total == null.variance),
    );

    // Analytic curves over the sweep range for the plot.
    let jacobian = system.output_jacobian()?;
    let drift_vec = system.drift_vector();
    let mut bias_curve = Vec::new();
    let mut variance_curve = Vec::new();
    let mut total_curve = Vec::new();
    for k in 1..=cfg.k_max {
        let shift = &jacobian * (&drift_vec * ((k as f64 - 1.0) / 2.0));
        let bias_sq = shift.norm_squared();
        let cov = system_aggregated_covariance(&system, k)?;
        let variance = (&jacobian * cov * jacobian.transpose()).trace();
        bias_curve.push((k as f64, bias_sq));
        variance_curve.push((k as f64, variance));
        total_curve.push((k as f64, bias_sq + variance));
    }

    Ok(SuiteOutcome {
        records,
        series: vec![
            Series::new("bias^2(K)", bias_curve),
            Series::new("variance(K)", variance_curve),
            Series::new("total(K)", total_curve),
        ],
        x_label: "K".into(),
        y_label: "expected squared output deviation".into(),
    })
}
