//! Test-time conditioning refinement: Monte Carlo estimation of the
//! conditioning operator, the single-step update `f <- T_hat(f)`, multi-pass
//! fixed-point iteration, and the multi-stream variant.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::feature::{feature_mean, Feature, FeatureSequence};
use crate::seed::SeedSpec;
use crate::system::System;

// Sub-stream tag for the final regeneration pass of two-pass inference.
const SUB_SECOND_PASS: u64 = 0xffff_0001;

/// Identifier of an independent conditioning pathway.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamId(String);

impl StreamId {
    pub const IDENTITY: &'static str = "identity";

    pub fn identity() -> Self {
        Self(Self::IDENTITY.to_string())
    }

    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0 == Self::IDENTITY
    }
}

/// Conditioning features per stream. The identity stream is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningState {
    streams: BTreeMap<StreamId, Feature>,
}

impl ConditioningState {
    pub fn new(streams: BTreeMap<StreamId, Feature>) -> Result<Self> {
        if !streams.contains_key(&StreamId::identity()) {
            return Err(Error::InvalidArgument(
                "conditioning state must contain the identity stream".into(),
            ));
        }
        Ok(Self { streams })
    }

    pub fn identity_only(feature: Feature) -> Self {
        let mut streams = BTreeMap::new();
        streams.insert(StreamId::identity(), feature);
        Self { streams }
    }

    pub fn with_stream(mut self, id: StreamId, feature: Feature) -> Self {
        self.streams.insert(id, feature);
        self
    }

    pub fn identity(&self) -> &Feature {
        &self.streams[&StreamId::identity()]
    }

    pub fn get(&self, id: &StreamId) -> Option<&Feature> {
        self.streams.get(id)
    }

    pub fn streams(&self) -> impl Iterator<Item = (&StreamId, &Feature)> {
        self.streams.iter()
    }

    fn set(&mut self, id: &StreamId, feature: Feature) {
        self.streams.insert(id.clone(), feature);
    }
}

/// How much to aggregate and which streams to refine.
#[derive(Debug, Clone)]
pub struct AdaptationConfig {
    frames: usize,
    passes: usize,
    streams: BTreeSet<StreamId>,
}

impl AdaptationConfig {
    /// Identity-only refinement with `frames` aggregated and a single pass,
    /// the deployed configuration.
    pub fn new(frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidArgument(
                "frames aggregated must be >= 1".into(),
            ));
        }
        let mut streams = BTreeSet::new();
        streams.insert(StreamId::identity());
        Ok(Self {
            frames,
            passes: 1,
            streams,
        })
    }

    pub fn with_passes(mut self, passes: usize) -> Result<Self> {
        if passes == 0 {
            return Err(Error::InvalidArgument("passes must be >= 1".into()));
        }
        self.passes = passes;
        Ok(self)
    }

    /// Additionally refine the given stream (the "with motion" variant).
    pub fn refine_stream(mut self, id: StreamId) -> Self {
        self.streams.insert(id);
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamId> {
        self.streams.iter()
    }
}

/// One synthetic system per conditioning stream. Streams do not cross-couple.
#[derive(Debug, Clone)]
pub struct StreamSystems {
    systems: BTreeMap<StreamId, System>,
}

impl StreamSystems {
    pub fn identity_only(system: System) -> Self {
        let mut systems = BTreeMap::new();
        systems.insert(StreamId::identity(), system);
        Self { systems }
    }

    pub fn with_stream(mut self, id: StreamId, system: System) -> Self {
        self.systems.insert(id, system);
        self
    }

    pub fn identity(&self) -> &System {
        &self.systems[&StreamId::identity()]
    }

    pub fn get(&self, id: &StreamId) -> Option<&System> {
        self.systems.get(id)
    }
}

/// Record of a refinement run: all iterates plus the residuals
/// `||f^(k) - T_hat(f^(k))||`, both of length `passes + 1`.
#[derive(Debug, Clone)]
pub struct RefinementTrace {
    iterates: Vec<ConditioningState>,
    residuals: Vec<f64>,
}

impl RefinementTrace {
    pub fn iterates(&self) -> &[ConditioningState] {
        &self.iterates
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }
}

/// Monte Carlo estimate of the conditioning operator:
/// `T_hat(f) = (1/K) sum_{t=1..K} (E o G)(f, A)_t`, from a single generated
/// sequence of length `K`.
pub fn mc_estimate_t(
    system: &System,
    f: &Feature,
    frames: usize,
    seed: &SeedSpec,
) -> Result<Feature> {
    if frames == 0 {
        return Err(Error::InvalidArgument(
            "frames aggregated must be >= 1".into(),
        ));
    }
    let seq = system.generate(f, frames, seed)?;
    feature_mean(&seq, frames)
}

fn check_streams(
    systems: &StreamSystems,
    state: &ConditioningState,
    cfg: &AdaptationConfig,
) -> Result<Vec<StreamId>> {
    let mut refined = Vec::new();
    for id in cfg.streams() {
        if state.get(id).is_none() {
            return Err(Error::InvalidArgument(format!(
                "stream '{}' is configured for refinement but absent from the state",
                id.as_str()
            )));
        }
        if systems.get(id).is_none() {
            return Err(Error::InvalidArgument(format!(
                "stream '{}' has no associated system",
                id.as_str()
            )));
        }
        refined.push(id.clone());
    }
    Ok(refined)
}

/// One refinement step applied to every configured stream; returns the next
/// state and the joint residual of the current one.
fn refinement_step(
    systems: &StreamSystems,
    state: &ConditioningState,
    refined: &[StreamId],
    frames: usize,
    pass_seed: &SeedSpec,
) -> Result<(ConditioningState, f64)> {
    let mut next = state.clone();
    let mut residual_sq = 0.0;
    for (j, id) in refined.iter().enumerate() {
        let system = systems.get(id).expect("stream checked");
        let current = state.get(id).expect("stream checked");
        let estimate = mc_estimate_t(system, current, frames, &pass_seed.substream(j as u64))?;
        residual_sq += (current.vector() - estimate.vector()).norm_squared();
        next.set(id, estimate);
    }
    Ok((next, residual_sq.sqrt()))
}

/// Multi-pass refinement `f^(k+1) = T_hat(f^(k))` per configured stream.
/// Unconfigured streams pass through bit-identically. The trace holds
/// `passes + 1` iterates and residuals; the final residual costs one extra
/// operator estimate.
pub fn refine(
    systems: &StreamSystems,
    state: &ConditioningState,
    cfg: &AdaptationConfig,
    seed: &SeedSpec,
) -> Result<(ConditioningState, RefinementTrace)> {
    let refined = check_streams(systems, state, cfg)?;
    let mut iterates = vec![state.clone()];
    let mut residuals = Vec::with_capacity(cfg.passes() + 1);
    let mut current = state.clone();
    for pass in 1..=cfg.passes() + 1 {
        let (next, residual) = refinement_step(
            systems,
            &current,
            &refined,
            cfg.frames(),
            &seed.substream(pass as u64),
        )?;
        residuals.push(residual);
        if pass <= cfg.passes() {
            iterates.push(next.clone());
            current = next;
        }
    }
    Ok((
        current,
        RefinementTrace {
            iterates,
            residuals,
        },
    ))
}

/// Output of two-pass inference.
#[derive(Debug, Clone)]
pub struct TwoPassOutput {
    pub baseline: FeatureSequence,
    pub refined: FeatureSequence,
    pub refined_state: ConditioningState,
}

/// Two-pass inference: generate `len` frames per refined stream, aggregate
/// the first `cfg.frames()` of each pass-1 sequence into the refined state,
/// then regenerate the identity stream with a fresh noise sub-stream.
/// Additional passes (when configured) draw fresh short sequences.
pub fn two_pass_inference(
    systems: &StreamSystems,
    state: &ConditioningState,
    cfg: &AdaptationConfig,
    len: usize,
    seed: &SeedSpec,
) -> Result<TwoPassOutput> {
    if len < cfg.frames() {
        return Err(Error::InvalidArgument(format!(
            "sequence length {} is shorter than the aggregation window {}",
            len,
            cfg.frames()
        )));
    }
    let refined_ids = check_streams(systems, state, cfg)?;

    // Pass 1: full-length generation per refined stream; the identity
    // stream's sequence is the baseline output.
    let pass1_root = seed.substream(1);
    let mut baseline_identity = None;
    let mut refined_state = state.clone();
    for (j, id) in refined_ids.iter().enumerate() {
        let system = systems.get(id).expect("stream checked");
        let current = state.get(id).expect("stream checked");
        let seq = system.generate(current, len, &pass1_root.substream(j as u64))?;
        refined_state.set(id, feature_mean(&seq, cfg.frames())?);
        if id.is_identity() {
            baseline_identity = Some(seq);
        }
    }
    let baseline = baseline_identity.expect("identity stream is always refined");

    // Additional refinement passes, fresh short generations.
    for pass in 2..=cfg.passes() {
        let (next, _) = refinement_step(
            systems,
            &refined_state,
            &refined_ids,
            cfg.frames(),
            &seed.substream(pass as u64),
        )?;
        refined_state = next;
    }

    // Pass 2: independent noise sub-stream, conditioned on the refined state.
    let refined = systems.identity().generate(
        refined_state.identity(),
        len,
        &seed.substream(SUB_SECOND_PASS),
    )?;
    Ok(TwoPassOutput {
        baseline,
        refined,
        refined_state,
    })
}

/// First-order gradient of the self-consistency objective at `f`:
/// `2 (f - T(f))`, with the Jacobian term dropped. Zero exactly at fixed
/// points of `T`.
pub fn self_consistency_gradient(
    system: &System,
    f: &Feature,
    horizon: usize,
) -> Result<DVector<f64>> {
    let mapped = system.conditioning_mean(f, horizon)?;
    Ok((f.vector() - mapped.vector()) * 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::LaggedCovarianceModel;
    use crate::system::AffineSystem;
    use nalgebra::DVector;

    fn half_system() -> System {
        // A = 0.5 I, b = (1, 0): fixed point (2, 0).
        System::Affine(
            AffineSystem::isotropic(
                0.5,
                DVector::from_row_slice(&[1.0, 0.0]),
                LaggedCovarianceModel::zero(2).unwrap(),
            )
            .unwrap(),
        )
    }

    fn feature(values: &[f64]) -> Feature {
        Feature::from_slice(values).unwrap()
    }

    #[test]
    fn estimate_of_noiseless_identity_system_is_exact() {
        let sys = System::Affine(
            AffineSystem::isotropic(
                1.0,
                DVector::zeros(2),
                LaggedCovarianceModel::zero(2).unwrap(),
            )
            .unwrap(),
        );
        let f = feature(&[3.0, 1.0]);
        for k in [1usize, 2, 7] {
            let est = mc_estimate_t(&sys, &f, k, &SeedSpec::new(0).trial(0)).unwrap();
            assert_eq!(est.vector().as_slice(), &[3.0, 1.0]);
        }
        assert!(mc_estimate_t(&sys, &f, 0, &SeedSpec::new(0)).is_err());
    }

    #[test]
    fn k_equal_one_reproduces_the_first_frame() {
        let noise = LaggedCovarianceModel::isotropic(2, 0.5, 0.3).unwrap();
        let sys = System::Affine(AffineSystem::isotropic(0.5, DVector::zeros(2), noise).unwrap());
        let f = feature(&[1.0, 1.0]);
        let seed = SeedSpec::new(5).trial(2);
        let est = mc_estimate_t(&sys, &f, 1, &seed).unwrap();
        let seq = sys.generate(&f, 1, &seed).unwrap();
        assert!(est.bits_eq(seq.frame(0)));
    }

    #[test]
    fn fixed_point_is_left_unchanged() {
        let sys = half_system();
        let fp = sys.fixed_point(4).unwrap();
        let systems = StreamSystems::identity_only(sys);
        let cfg = AdaptationConfig::new(4).unwrap();
        let (out, trace) = refine(
            &systems,
            &ConditioningState::identity_only(fp.clone()),
            &cfg,
            &SeedSpec::new(0),
        )
        .unwrap();
        assert!((out.identity().vector() - fp.vector()).norm() < 1e-12);
        assert!(trace.residuals().iter().all(|r| *r < 1e-12));
    }

    /// Hand-iterated geometric sequence: (0,0) -> (1,0) -> (1.5,0) -> (1.75,0).
    #[test]
    fn noiseless_iterates_match_hand_computation() {
        let systems = StreamSystems::identity_only(half_system());
        let cfg = AdaptationConfig::new(4).unwrap().with_passes(3).unwrap();
        let (out, trace) = refine(
            &systems,
            &ConditioningState::identity_only(feature(&[0.0, 0.0])),
            &cfg,
            &SeedSpec::new(0),
        )
        .unwrap();
        let expected = [[0.0, 0.0], [1.0, 0.0], [1.5, 0.0], [1.75, 0.0]];
        assert_eq!(trace.iterates().len(), 4);
        assert_eq!(trace.residuals().len(), 4);
        for (iterate, want) in trace.iterates().iter().zip(expected) {
            let got = iterate.identity().vector();
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        }
        assert!((out.identity().vector()[0] - 1.75).abs() < 1e-12);
        // Residuals shrink by exactly ||A||_2 = 0.5 per pass.
        for w in trace.residuals().windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn unrefined_streams_pass_through_bit_identically() {
        let motion_id = StreamId::new("motion");
        let systems = StreamSystems::identity_only(half_system())
            .with_stream(motion_id.clone(), half_system());
        let motion_feature = feature(&[0.123456789, -9.87654321]);
        let state = ConditioningState::identity_only(feature(&[0.0, 0.0]))
            .with_stream(motion_id.clone(), motion_feature.clone());
        let cfg = AdaptationConfig::new(4).unwrap(); // identity only
        let (out, _) = refine(&systems, &state, &cfg, &SeedSpec::new(1)).unwrap();
        assert!(out.get(&motion_id).unwrap().bits_eq(&motion_feature));
    }

    #[test]
    fn refining_a_missing_stream_is_rejected() {
        let systems = StreamSystems::identity_only(half_system());
        let state = ConditioningState::identity_only(feature(&[0.0, 0.0]));
        let cfg = AdaptationConfig::new(2)
            .unwrap()
            .refine_stream(StreamId::new("motion"));
        assert!(matches!(
            refine(&systems, &state, &cfg, &SeedSpec::new(0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn both_streams_refine_against_their_own_systems() {
        let motion_id = StreamId::new("motion");
        // Identity contracts to (2, 0); the motion system to (-4, 0).
        let motion_sys = System::Affine(
            AffineSystem::isotropic(
                0.5,
                DVector::from_row_slice(&[-2.0, 0.0]),
                LaggedCovarianceModel::zero(2).unwrap(),
            )
            .unwrap(),
        );
        let systems =
            StreamSystems::identity_only(half_system()).with_stream(motion_id.clone(), motion_sys);
        let state = ConditioningState::identity_only(feature(&[0.0, 0.0]))
            .with_stream(motion_id.clone(), feature(&[0.0, 0.0]));
        let cfg = AdaptationConfig::new(3)
            .unwrap()
            .refine_stream(motion_id.clone());
        let (out, _) = refine(&systems, &state, &cfg, &SeedSpec::new(0)).unwrap();
        assert!((out.identity().vector()[0] - 1.0).abs() < 1e-12);
        assert!((out.get(&motion_id).unwrap().vector()[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_pass_on_stationary_noiseless_system_is_a_no_op() {
        let sys = half_system();
        let fp = sys.fixed_point(8).unwrap();
        let systems = StreamSystems::identity_only(sys);
        let cfg = AdaptationConfig::new(4).unwrap();
        let out = two_pass_inference(
            &systems,
            &ConditioningState::identity_only(fp),
            &cfg,
            8,
            &SeedSpec::new(0),
        )
        .unwrap();
        for t in 0..8 {
            assert!(out.baseline.frame(t).bits_eq(out.refined.frame(t)));
        }
    }

    #[test]
    fn refinement_reuses_the_first_pass_frames() {
        let noise = LaggedCovarianceModel::isotropic(2, 0.3, 0.4).unwrap();
        let sys = System::Affine(
            AffineSystem::isotropic(0.5, DVector::from_row_slice(&[1.0, 0.0]), noise).unwrap(),
        );
        let systems = StreamSystems::identity_only(sys);
        let cfg = AdaptationConfig::new(3).unwrap();
        let seed = SeedSpec::new(77).trial(0);
        let out = two_pass_inference(
            &systems,
            &ConditioningState::identity_only(feature(&[0.0, 0.0])),
            &cfg,
            6,
            &seed,
        )
        .unwrap();
        let expected = feature_mean(&out.baseline, 3).unwrap();
        assert!(out.refined_state.identity().bits_eq(&expected));
    }

    #[test]
    fn aggregation_window_may_cover_the_whole_sequence() {
        let noise = LaggedCovarianceModel::isotropic(2, 0.3, 0.0).unwrap();
        let sys = System::Affine(AffineSystem::isotropic(0.5, DVector::zeros(2), noise).unwrap());
        let systems = StreamSystems::identity_only(sys);
        let cfg = AdaptationConfig::new(5).unwrap();
        let state = ConditioningState::identity_only(feature(&[1.0, 1.0]));
        let out = two_pass_inference(&systems, &state, &cfg, 5, &SeedSpec::new(3)).unwrap();
        assert_eq!(out.baseline.len(), 5);
        assert_eq!(out.refined.len(), 5);
        assert!(two_pass_inference(
            &systems,
            &state,
            &AdaptationConfig::new(6).unwrap(),
            5,
            &SeedSpec::new(3)
        )
        .is_err());
    }

    #[test]
    fn gradient_vanishes_at_the_fixed_point() {
        let sys = half_system();
        let fp = sys.fixed_point(4).unwrap();
        let grad = self_consistency_gradient(&sys, &fp, 4).unwrap();
        assert!(grad.norm() < 1e-10);
        let off = self_consistency_gradient(&sys, &feature(&[0.0, 0.0]), 4).unwrap();
        assert!((off - DVector::from_row_slice(&[-2.0, 0.0])).norm() < 1e-12);
    }

    /// The estimator mean over 1e4 independent seeds lands within
    /// 3 sigma / sqrt(K M) per entry of the closed-form operator
    /// (i.i.d. noise, sigma = 0.1, K = 4).
    #[test]
    fn estimator_mean_tracks_the_operator() {
        let sigma = 0.1;
        let noise = LaggedCovarianceModel::isotropic(2, sigma * sigma, 0.0).unwrap();
        let sys = System::Affine(
            AffineSystem::isotropic(0.5, DVector::from_row_slice(&[1.0, 0.0]), noise).unwrap(),
        );
        let f = feature(&[0.2, -0.4]);
        let (k, trials) = (4usize, 10_000usize);
        let expected = sys.conditioning_mean(&f, k).unwrap();
        let root = SeedSpec::new(2024);
        let mut mean = DVector::zeros(2);
        for i in 0..trials {
            mean += mc_estimate_t(&sys, &f, k, &root.trial(i as u64))
                .unwrap()
                .into_vector();
        }
        mean /= trials as f64;
        let tol = 3.0 * sigma / ((k * trials) as f64).sqrt();
        for j in 0..2 {
            let err = (mean[j] - expected.vector()[j]).abs();
            assert!(err <= tol, "entry {j}: error {err} exceeds {tol}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Noiseless refinement residuals on a general contractive affine
            // map never shrink slower than the spectral norm per pass.
            #[test]
            fn residual_ratios_are_bounded_by_the_spectral_norm(
                entries in proptest::collection::vec(-1.0f64..1.0, 4),
                start in proptest::collection::vec(-3.0f64..3.0, 2),
            ) {
                let map = nalgebra::DMatrix::from_row_slice(2, 2, &entries) * 0.45;
                let sys = System::Affine(AffineSystem::new(
                    map,
                    DVector::from_row_slice(&[1.0, -0.5]),
                    LaggedCovarianceModel::zero(2).unwrap(),
                    DVector::zeros(2),
                ).unwrap());
                let rate = sys.lipschitz_constant();
                let systems = StreamSystems::identity_only(sys);
                let cfg = AdaptationConfig::new(2).unwrap().with_passes(5).unwrap();
                let state = ConditioningState::identity_only(Feature::from_slice(&start).unwrap());
                let (_, trace) = refine(&systems, &state, &cfg, &SeedSpec::new(0)).unwrap();
                for w in trace.residuals().windows(2) {
                    if w[0] > 1e-12 {
                        prop_assert!(w[1] <= rate * w[0] * (1.0 + 1e-9));
                    }
                }
            }
        }
    }
}
