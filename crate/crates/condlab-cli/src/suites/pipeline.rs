//! Pipeline suite: paired two-pass inference. Pass 1 generates from the
//! initial conditioning, the first K frames are aggregated into a refined
//! feature, pass 2 regenerates with it, and both sequences are scored
//! against the reference feature.
//!
//! With drift on, the checks ask for improvement (mean delta beyond 2
//! standard errors in the favorable direction) in identity similarity and
//! drift norm; with drift off they ask for null deltas within 3 standard
//! errors. On the translation-invariant linear pipeline (`Q M = I`) the
//! refined feature is the initial one plus the early-drift offset plus
//! aggregation noise, so refinement measurably degrades these metrics — the
//! improvement regime needs a system whose frames pull back toward an
//! equilibrium, e.g. the mean-reverting affine configuration (negative
//! scale).

use condlab::metrics::{compare, evaluate};
use condlab::{
    two_pass_inference, AdaptationConfig, AffineSystem, ConditioningState, Feature,
    LaggedCovarianceModel, LinearPipelineSystem, NonlinearSystem, Result, SeedSpec, StreamSystems,
    System,
};
use nalgebra::DMatrix;

use crate::config::{ExperimentConfig, Family};
use crate::plot::Series;
use crate::record::{ExperimentRecord, Value};
use crate::suites::{seeded_feature, seeded_unit, SuiteOutcome};

/// Reference feature plus a system whose baseline pass is conditioned on it.
pub fn build_system(cfg: &ExperimentConfig, seed: &SeedSpec) -> Result<(System, Feature)> {
    let noise = LaggedCovarianceModel::isotropic(cfg.dim, cfg.sigma2, cfg.rho)?;
    let reference = seeded_feature(cfg.dim, 10.0, &seed.substream(0xE0))?;
    let system = match cfg.family {
        Family::LinearPipeline => System::Pipeline(LinearPipelineSystem::seeded(
            cfg.dim,
            cfg.render_dim,
            cfg.motion_dim,
            noise,
            cfg.motion_noise,
            cfg.drift,
            cfg.seed ^ 0xE1,
        )?),
        // Affine family anchored at the reference: b = (I - A) mu makes mu
        // the fixed point, so frames mean-revert toward the reference.
        Family::Affine => {
            let d = cfg.dim;
            let map = DMatrix::identity(d, d) * cfg.scale;
            let offset = (DMatrix::identity(d, d) - &map) * reference.vector();
            System::Affine(AffineSystem::new(
                map,
                offset,
                noise,
                seeded_unit(d, &seed.substream(0xE2)) * cfg.drift,
            )?)
        }
        Family::Nonlinear => System::Nonlinear(NonlinearSystem::seeded(
            cfg.dim,
            0.9,
            0.8,
            reference.vector().clone(),
            noise,
            cfg.seed ^ 0xE3,
        )?),
    };
    Ok((system, reference))
}

struct PairedDelta {
    name: &'static str,
    deltas: Vec<f64>,
    baseline_mean: f64,
    refined_mean: f64,
    /// Positive deltas are improvements when true, negative when false.
    higher_is_better: bool,
}

pub fn run(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let seed = SeedSpec::new(cfg.seed);
    let (system, reference) = build_system(cfg, &seed)?;
    let systems = StreamSystems::identity_only(system);
    let state = ConditioningState::identity_only(reference.clone());
    let adapt = AdaptationConfig::new(cfg.k)?.with_passes(cfg.passes)?;

    let pairs = cfg.trials;
    let mut metrics = [
        PairedDelta {
            name: "mean_identity_sim",
            deltas: Vec::with_capacity(pairs),
            baseline_mean: 0.0,
            refined_mean: 0.0,
            higher_is_better: true,
        },
        PairedDelta {
            name: "drift_norm",
            deltas: Vec::with_capacity(pairs),
            baseline_mean: 0.0,
            refined_mean: 0.0,
            higher_is_better: false,
        },
        PairedDelta {
            name: "smoothness",
            deltas: Vec::with_capacity(pairs),
            baseline_mean: 0.0,
            refined_mean: 0.0,
            higher_is_better: true,
        },
        PairedDelta {
            name: "terminal_deviation",
            deltas: Vec::with_capacity(pairs),
            baseline_mean: 0.0,
            refined_mean: 0.0,
            higher_is_better: false,
        },
    ];
    let mut baseline_sims = Vec::with_capacity(pairs);
    let mut refined_sims = Vec::with_capacity(pairs);

    for i in 0..pairs {
        let out = two_pass_inference(&systems, &state, &adapt, cfg.horizon, &seed.trial(i as u64))?;
        let baseline = evaluate(&out.baseline, &reference)?;
        let refined = evaluate(&out.refined, &reference)?;
        let delta = compare(&baseline, &refined);
        baseline_sims.push((i as f64, baseline.mean_identity_sim));
        refined_sims.push((i as f64, refined.mean_identity_sim));
        for (slot, (d, b, r)) in metrics.iter_mut().zip([
            (
                delta.mean_identity_sim,
                baseline.mean_identity_sim,
                refined.mean_identity_sim,
            ),
            (delta.drift_norm, baseline.drift_norm, refined.drift_norm),
            (delta.smoothness, baseline.smoothness, refined.smoothness),
            (
                delta.terminal_deviation,
                baseline.terminal_deviation,
                refined.terminal_deviation,
            ),
        ]) {
            slot.deltas.push(d);
            slot.baseline_mean += b / pairs as f64;
            slot.refined_mean += r / pairs as f64;
        }
    }

    let null_case = cfg.drift == 0.0;
    let mut records = Vec::new();
    for metric in &metrics {
        let n = metric.deltas.len() as f64;
        let mean = metric.deltas.iter().sum::<f64>() / n;
        let var = metric
            .deltas
            .iter()
            .map(|d| (d - mean) * (d - mean))
            .sum::<f64>()
            / (n - 1.0);
        let se = (var / n).sqrt();

        // The contract covers identity similarity and drift norm; the other
        // two metrics are reported without a pass requirement.
        let contractual = matches!(metric.name, "mean_identity_sim" | "drift_norm");
        let (criterion, passed) = if null_case {
            ("null_within_3se", !contractual || mean.abs() <= 3.0 * se)
        } else {
            let improved = if metric.higher_is_better {
                mean > 2.0 * se
            } else {
                mean < -2.0 * se
            };
            ("improvement_beyond_2se", !contractual || improved)
        };
        records.push(
            ExperimentRecord::new("pipeline", cfg.seed)
                .param(
                    "check",
                    Value::text(if contractual { criterion } else { "reported" }),
                )
                .param("metric", Value::text(metric.name))
                .param("family", Value::text(cfg.family.as_str()))
                .param("drift", Value::Float(cfg.drift))
                .param("k", Value::Int(cfg.k as i64))
                .param("horizon", Value::Int(cfg.horizon as i64))
                .param("paired_seeds", Value::Int(pairs as i64))
                .result("mean_delta", Value::Float(mean))
                .result("se", Value::Float(se))
                .result("baseline_mean", Value::Float(metric.baseline_mean))
                .result("refined_mean", Value::Float(metric.refined_mean))
                .result("analytic_reference", Value::text("empirical-only"))
                .passed(passed),
        );
    }

    Ok(SuiteOutcome {
        records,
        series: vec![
            Series::new("baseline mean identity similarity", baseline_sims),
            Series::new("refined mean identity similarity", refined_sims),
        ],
        x_label: "paired seed index".into(),
        y_label: "mean identity similarity".into(),
    })
}
