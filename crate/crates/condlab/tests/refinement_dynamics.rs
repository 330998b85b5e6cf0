//! End-to-end refinement dynamics on full systems: law-of-large-numbers
//! behavior of the aggregate, the exact translation law of the pipeline,
//! and the paired two-pass comparison in the mean-reverting regime where
//! contraction toward the subject equilibrium makes refinement profitable.

use condlab::metrics::{compare, evaluate};
use condlab::{
    two_pass_inference, AdaptationConfig, AffineSystem, ConditioningState, Feature,
    LaggedCovarianceModel, LinearPipelineSystem, MotionModel, SeedSpec, StreamSystems, System,
};
use nalgebra::{DMatrix, DVector};

fn seeded_unit(dim: usize, seed: u64) -> DVector<f64> {
    let v = SeedSpec::new(seed).source().standard_normal_vector(dim);
    let n = v.norm();
    v / n
}

/// Aggregating 100 AR(1) frames around a zero mean lands within 0.5 sigma of
/// the mean, re-checked over ten independent re-simulations.
#[test]
fn aggregate_obeys_the_law_of_large_numbers() {
    let sigma = 1.0;
    let noise = LaggedCovarianceModel::isotropic(2, sigma * sigma, 0.3).unwrap();
    let system = System::Affine(AffineSystem::isotropic(0.0, DVector::zeros(2), noise).unwrap());
    let f = Feature::zeros(2).unwrap();
    let spec = SeedSpec::new(123);
    for trial in 0..10 {
        let seq = system.generate(&f, 100, &spec.trial(trial)).unwrap();
        let mean = condlab::feature_mean(&seq, 100).unwrap();
        let worst = mean.vector().amax();
        assert!(
            worst <= 0.5 * sigma,
            "trial {trial}: aggregate {worst} strays past 0.5 sigma"
        );
    }
}

/// The pipeline is translation-invariant in its conditioning: with noiseless
/// drift, the refined feature is the initial one plus the early-drift offset
/// `beta * (K+1)/2 * QPu`, and every pass-2 frame carries that offset on top
/// of its own drift. Aggregation can therefore never pull the conditioning
/// back toward the reference on this family.
#[test]
fn pipeline_two_pass_obeys_the_translation_law() {
    let (d, p, m) = (3, 6, 2);
    let beta = 0.1;
    let k = 4;
    let pipe = LinearPipelineSystem::seeded(
        d,
        p,
        m,
        LaggedCovarianceModel::zero(d).unwrap(),
        0.0,
        beta,
        99,
    )
    .unwrap();
    let gain = pipe.motion_gain() * pipe.motion().mean_shift();
    let system = System::Pipeline(pipe);
    let f0 = Feature::from_slice(&[1.0, -2.0, 0.5]).unwrap();
    let systems = StreamSystems::identity_only(system);
    let cfg = AdaptationConfig::new(k).unwrap();
    let out = two_pass_inference(
        &systems,
        &ConditioningState::identity_only(f0.clone()),
        &cfg,
        12,
        &SeedSpec::new(5),
    )
    .unwrap();

    let offset = &gain * (beta * (k as f64 + 1.0) / 2.0);
    let refined = out.refined_state.identity();
    assert!((refined.vector() - (f0.vector() + &offset)).norm() < 1e-12);
    for t in 1..=12usize {
        let expected = f0.vector() + &offset + &gain * (beta * t as f64);
        let got = out.refined.frame(t - 1).vector();
        assert!((got - expected).norm() < 1e-12, "frame {t}");
    }
}

/// Noiseless drifted pipeline, T = 20: the drift norm of the generated
/// sequence is the arithmetic-series mean `||QPu|| * beta * (T+1)/2`.
#[test]
fn drift_norm_matches_the_arithmetic_series() {
    let beta = 0.1;
    let horizon = 20usize;
    let pipe = LinearPipelineSystem::seeded(
        4,
        9,
        3,
        LaggedCovarianceModel::zero(4).unwrap(),
        0.0,
        beta,
        123,
    )
    .unwrap();
    let gain_norm = (pipe.motion_gain() * pipe.motion().mean_shift()).norm();
    let system = System::Pipeline(pipe);
    let mu = Feature::new(seeded_unit(4, 6) * 3.0).unwrap();
    let seq = system
        .generate(&mu, horizon, &SeedSpec::new(0).trial(0))
        .unwrap();
    let metrics = evaluate(&seq, &mu).unwrap();
    let expected = gain_norm * beta * (horizon as f64 + 1.0) / 2.0;
    assert!(
        (metrics.drift_norm - expected).abs() < 1e-12,
        "drift norm {} vs arithmetic series {expected}",
        metrics.drift_norm
    );
}

struct PairedOutcome {
    sim_mean: f64,
    sim_se: f64,
    drift_mean: f64,
    drift_se: f64,
}

fn paired_two_pass(
    system: System,
    reference: &Feature,
    pairs: usize,
    master: u64,
) -> PairedOutcome {
    let systems = StreamSystems::identity_only(system);
    let state = ConditioningState::identity_only(reference.clone());
    let cfg = AdaptationConfig::new(4).unwrap();
    let root = SeedSpec::new(master);
    let mut sim = Vec::with_capacity(pairs);
    let mut drift = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let out = two_pass_inference(&systems, &state, &cfg, 40, &root.trial(i as u64)).unwrap();
        let baseline = evaluate(&out.baseline, reference).unwrap();
        let refined = evaluate(&out.refined, reference).unwrap();
        let delta = compare(&baseline, &refined);
        sim.push(delta.mean_identity_sim);
        drift.push(delta.drift_norm);
    }
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (sim_mean, sim_se) = stats(&sim);
    let (drift_mean, drift_se) = stats(&drift);
    PairedOutcome {
        sim_mean,
        sim_se,
        drift_mean,
        drift_se,
    }
}

/// Mean-reverting system anchored at the reference feature. The offset
/// `b = (I - A) mu` makes `mu` the fixed point of the conditioning operator.
fn mean_reverting(dim: usize, scale: f64, mu: &Feature, drift: f64, sigma2: f64) -> System {
    let map = DMatrix::identity(dim, dim) * scale;
    let offset = (DMatrix::identity(dim, dim) - &map) * mu.vector();
    let noise = LaggedCovarianceModel::isotropic(dim, sigma2, 0.0).unwrap();
    System::Affine(AffineSystem::new(map, offset, noise, seeded_unit(dim, 77) * drift).unwrap())
}

/// In the mean-reverting regime the refined pass improves identity
/// similarity and reduces drift beyond two standard errors over fifty
/// paired seeds, and refinement stays statistically neutral without drift.
#[test]
fn refinement_pays_off_in_the_mean_reverting_regime() {
    let dim = 8;
    let mu = Feature::new(seeded_unit(dim, 3) * 10.0).unwrap();

    let drifted = mean_reverting(dim, -0.05, &mu, 0.2, 0.005);
    let out = paired_two_pass(drifted, &mu, 50, 42);
    assert!(
        out.sim_mean > 2.0 * out.sim_se,
        "identity similarity delta {} not positive beyond 2 SE {}",
        out.sim_mean,
        out.sim_se
    );
    assert!(
        out.drift_mean < -2.0 * out.drift_se,
        "drift norm delta {} not negative beyond 2 SE {}",
        out.drift_mean,
        out.drift_se
    );

    let null = mean_reverting(dim, -0.05, &mu, 0.0, 0.005);
    let out = paired_two_pass(null, &mu, 50, 42);
    assert!(
        out.sim_mean.abs() <= 3.0 * out.sim_se,
        "null similarity delta {} exceeds 3 SE {}",
        out.sim_mean,
        out.sim_se
    );
    assert!(
        out.drift_mean.abs() <= 3.0 * out.drift_se,
        "null drift delta {} exceeds 3 SE {}",
        out.drift_mean,
        out.drift_se
    );
}

/// Refining the motion stream against its own system leaves the identity
/// stream's sequences untouched, and vice versa.
#[test]
fn streams_refine_independently_end_to_end() {
    let dim = 4;
    let mu = Feature::new(seeded_unit(dim, 8) * 5.0).unwrap();
    let identity_sys = mean_reverting(dim, 0.3, &mu, 0.0, 0.01);
    let motion_mu = Feature::new(seeded_unit(3, 9) * 2.0).unwrap();
    let motion_sys = {
        let map = DMatrix::identity(3, 3) * 0.2;
        let offset = (DMatrix::identity(3, 3) - &map) * motion_mu.vector();
        let noise = LaggedCovarianceModel::isotropic(3, 0.01, 0.0).unwrap();
        System::Affine(AffineSystem::new(map, offset, noise, DVector::zeros(3)).unwrap())
    };

    let motion_id = condlab::StreamId::new("motion");
    let systems =
        StreamSystems::identity_only(identity_sys).with_stream(motion_id.clone(), motion_sys);
    let state = ConditioningState::identity_only(mu.clone())
        .with_stream(motion_id.clone(), motion_mu.clone());

    let identity_only = AdaptationConfig::new(4).unwrap();
    let with_motion = AdaptationConfig::new(4)
        .unwrap()
        .refine_stream(motion_id.clone());
    let seed = SeedSpec::new(13);

    let a = two_pass_inference(&systems, &state, &identity_only, 10, &seed).unwrap();
    let b = two_pass_inference(&systems, &state, &with_motion, 10, &seed).unwrap();

    // Identity pathway sequences are bit-identical whether or not the motion
    // stream is refined alongside.
    for t in 0..10 {
        assert!(a.baseline.frame(t).bits_eq(b.baseline.frame(t)));
        assert!(a.refined.frame(t).bits_eq(b.refined.frame(t)));
    }
    // The motion feature only moves when configured.
    assert!(a.refined_state.get(&motion_id).unwrap().bits_eq(&motion_mu));
    assert!(!b.refined_state.get(&motion_id).unwrap().bits_eq(&motion_mu));
}

/// Motion jitter folds into the pipeline's aggregated covariance as an
/// independent white component.
#[test]
fn motion_noise_enters_the_covariance_decomposition() {
    let d = 3;
    let noise = LaggedCovarianceModel::isotropic(d, 0.02, 0.4).unwrap();
    let pipe = LinearPipelineSystem::seeded(d, 6, 2, noise, 0.3, 0.0, 55).unwrap();
    let qp = pipe.motion_gain().clone();
    let system = System::Pipeline(pipe);
    let components = system.noise_components().unwrap();
    assert_eq!(components.len(), 2);
    let motion_cov = components[1].gamma0();
    let expected = &qp * qp.transpose() * 0.09;
    assert!((motion_cov - expected).amax() < 1e-12);
    assert_eq!(components[1].rho(), 0.0);

    // And the empirical covariance of aggregates tracks the two-component
    // analytic total.
    let f = Feature::zeros(d).unwrap();
    let analytic = condlab::analysis::system_aggregated_covariance(&system, 3).unwrap();
    let empirical = condlab::analysis::empirical_aggregated_covariance(
        &system,
        &f,
        3,
        20_000,
        &SeedSpec::new(1),
    )
    .unwrap();
    let scale = analytic.trace() / d as f64;
    assert!(
        (&empirical - &analytic).amax() < 6.0 * scale * (2.0 / 19_999.0f64).sqrt(),
        "empirical covariance strays from the analytic total"
    );
}

/// Off-check: a MotionModel carried by the pipeline survives sampling with
/// the documented mean structure.
#[test]
fn drifting_motion_has_the_documented_mean() {
    let u = DVector::from_row_slice(&[0.6, -0.8]);
    let model = MotionModel::new(0.2, 0.5, u.clone()).unwrap();
    let seq = model.sample(6, &SeedSpec::new(4).trial(0)).unwrap();
    assert_eq!(seq.len(), 6);
    assert_eq!(seq.drift_rate(), 0.5);
    assert_eq!(seq.mean_shift(), &u);
}
