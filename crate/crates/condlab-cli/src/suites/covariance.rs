//! Covariance suite: the lag-weighted closed form for `Cov(fbar)` against a
//! naive double-sum oracle, the i.i.d. `Gamma_0 / K` special case, and
//! empirical sample covariances of aggregated features.

use condlab::analysis::{aggregated_covariance, empirical_aggregated_covariance};
use condlab::{AffineSystem, Feature, LaggedCovarianceModel, Result, SeedSpec, System};
use nalgebra::{DMatrix, DVector};

use crate::config::ExperimentConfig;
use crate::plot::Series;
use crate::record::{ExperimentRecord, Value};
use crate::suites::SuiteOutcome;

const CLOSED_FORM_TOL: f64 = 1e-12;

/// Independent verifier: Cov(fbar) = (1/K^2) sum_{i,j} Gamma_{|i-j|}.
fn double_sum_covariance(model: &LaggedCovarianceModel, k: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(model.dim(), model.dim());
    for i in 1..=k {
        for j in 1..=k {
            acc += model.lagged(i.abs_diff(j));
        }
    }
    acc / (k * k) as f64
}

fn psd_fixture(dim: usize, seed: &SeedSpec) -> DMatrix<f64> {
    let mut src = seed.source();
    let b = DMatrix::from_fn(dim, dim, |_, _| src.standard_normal());
    &b * b.transpose() / dim as f64
}

/// 4-standard-error band for one entry of a Gaussian sample covariance:
/// Var(S_ij) = (a_ii a_jj + a_ij^2) / (M - 1). The wider multiplier keeps
/// the simultaneous d*d-entry check stable across seeds.
fn entry_band(analytic: &DMatrix<f64>, i: usize, j: usize, trials: usize) -> f64 {
    let var =
        (analytic[(i, i)] * analytic[(j, j)] + analytic[(i, j)].powi(2)) / (trials as f64 - 1.0);
    4.0 * var.max(0.0).sqrt()
}

pub fn run(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let seed = SeedSpec::new(cfg.seed);
    let mut records = Vec::new();

    // Closed form versus the double-sum oracle over the correlation grid.
    let fixture = psd_fixture(3, &seed.substream(1));
    for &rho in &[0.0, 0.3, 0.5, 0.9] {
        let model = LaggedCovarianceModel::new(fixture.clone(), rho)?;
        let mut max_err: f64 = 0.0;
        for k in 1..=32 {
            let closed = aggregated_covariance(&model, k)?;
            let oracle = double_sum_covariance(&model, k);
            max_err = max_err.max((closed - oracle).amax());
        }
        records.push(
            ExperimentRecord::new("covariance", cfg.seed)
                .param("check", Value::text("closed_form_vs_double_sum"))
                .param("rho", Value::Float(rho))
                .param("d", Value::Int(3))
                .param("k_max", Value::Int(32))
                .result("max_abs_error", Value::Float(max_err))
                .result("tolerance", Value::Float(CLOSED_FORM_TOL))
                .passed(max_err <= CLOSED_FORM_TOL),
        );
    }

    // rho = 0 special case: exactly Gamma_0 / K.
    let iid = LaggedCovarianceModel::isotropic(cfg.dim, cfg.sigma2, 0.0)?;
    let agg = aggregated_covariance(&iid, cfg.k)?;
    let expected = iid.gamma0() / cfg.k as f64;
    let iid_err = (&agg - &expected).amax();
    records.push(
        ExperimentRecord::new("covariance", cfg.seed)
            .param("check", Value::text("iid_scaling"))
            .param("rho", Value::Float(0.0))
            .param("d", Value::Int(cfg.dim as i64))
            .param("k", Value::Int(cfg.k as i64))
            .param("sigma2", Value::Float(cfg.sigma2))
            .result("max_abs_error", Value::Float(iid_err))
            .result("tolerance", Value::Float(0.0))
            .passed(iid_err == 0.0),
    );

    // Scalar empirical check per window, also the plot series.
    let scalar_model = LaggedCovarianceModel::isotropic(1, cfg.sigma2, cfg.rho)?;
    let scalar_system = System::Affine(AffineSystem::isotropic(
        cfg.scale.clamp(-0.9, 0.9),
        DVector::zeros(1),
        scalar_model.clone(),
    )?);
    let f0 = Feature::zeros(1)?;
    let mut analytic_points = Vec::new();
    let mut empirical_points = Vec::new();
    for k in 1..=cfg.k_max {
        let analytic = aggregated_covariance(&scalar_model, k)?[(0, 0)];
        let empirical = empirical_aggregated_covariance(
            &scalar_system,
            &f0,
            k,
            cfg.trials,
            &seed.substream(100 + k as u64),
        )?[(0, 0)];
        let band = 3.0 * analytic * (2.0 / (cfg.trials as f64 - 1.0)).sqrt();
        let err = (empirical - analytic).abs();
        analytic_points.push((k as f64, analytic));
        empirical_points.push((k as f64, empirical));
        records.push(
            ExperimentRecord::new("covariance", cfg.seed)
                .param("check", Value::text("empirical_scalar"))
                .param("d", Value::Int(1))
                .param("k", Value::Int(k as i64))
                .param("rho", Value::Float(cfg.rho))
                .param("sigma2", Value::Float(cfg.sigma2))
                .param("trials", Value::Int(cfg.trials as i64))
                .result("analytic", Value::Float(analytic))
                .result("empirical", Value::Float(empirical))
                .result("band", Value::Float(band))
                .result("abs_error", Value::Float(err))
                .passed(err <= band),
        );
    }

    // Matrix-valued empirical check at the configured window.
    let matrix_model = LaggedCovarianceModel::isotropic(cfg.dim, cfg.sigma2, cfg.rho)?;
    let matrix_system = System::Affine(AffineSystem::isotropic(
        cfg.scale.clamp(-0.9, 0.9),
        DVector::zeros(cfg.dim),
        matrix_model.clone(),
    )?);
    let analytic = aggregated_covariance(&matrix_model, cfg.k)?;
    let empirical = empirical_aggregated_covariance(
        &matrix_system,
        &Feature::zeros(cfg.dim)?,
        cfg.k,
        cfg.trials,
        &seed.substream(200),
    )?;
    let mut worst_ratio: f64 = 0.0;
    for i in 0..cfg.dim {
        for j in 0..cfg.dim {
            let band = entry_band(&analytic, i, j, cfg.trials);
            if band > 0.0 {
                worst_ratio = worst_ratio.max((empirical[(i, j)] - analytic[(i, j)]).abs() / band);
            }
        }
    }
    records.push(
        ExperimentRecord::new("covariance", cfg.seed)
            .param("check", Value::text("empirical_matrix"))
            .param("d", Value::Int(cfg.dim as i64))
            .param("k", Value::Int(cfg.k as i64))
            .param("rho", Value::Float(cfg.rho))
            .param("sigma2", Value::Float(cfg.sigma2))
            .param("trials", Value::Int(cfg.trials as i64))
            .result("max_band_ratio", Value::Float(worst_ratio))
            .result("band_definition", Value::text("4se_gaussian_sample_cov"))
            .passed(worst_ratio <= 1.0),
    );

    Ok(SuiteOutcome {
        records,
        series: vec![
            Series::new("analytic aggregated variance", analytic_points),
            Series::new("empirical aggregated variance", empirical_points),
        ],
        x_label: "K".into(),
        y_label: "variance of the K-frame mean".into(),
    })
}
