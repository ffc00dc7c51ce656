//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use vistac_core::estimator::{problem_from_initialization, Factors, FullState, ProblemConfig};
use vistac_core::initializer::{initialize_batch, InitPolicy, KeyframeSet};
use vistac_core::pipeline::{dataset, frame_observations, RunConfig};
use vistac_core::{ImuBias, SyntheticDataset, TrajectoryConfig};

/// Nominal-noise dataset long enough for `keyframes` keyframes at the default stride.
pub fn nominal_dataset(keyframes: usize, seed: u64) -> (RunConfig, SyntheticDataset) {
    let mut cfg = RunConfig::default();
    let spacing = cfg.init.keyframe_stride as f64 / cfg.rig.camera_rate;
    cfg.trajectory = TrajectoryConfig { duration: spacing * keyframes as f64 + 1.0, ..TrajectoryConfig::default() };
    cfg.rig.time_offset = 0.05;
    let d = dataset(&cfg, seed).expect("valid default configuration");
    (cfg, d)
}

/// The first `count` keyframes of a dataset at the configured stride.
pub fn keyframe_prefix(cfg: &RunConfig, d: &SyntheticDataset, count: usize) -> KeyframeSet {
    let tagged = d.camera_poses().into_iter().enumerate().step_by(cfg.init.keyframe_stride.max(1)).take(count).collect();
    KeyframeSet::new(tagged, Arc::from(d.imu.clone()), d.noise, ImuBias::zero()).expect("poses covered by IMU")
}

/// Bundle-adjustment problem seeded from a batch initialization.
pub fn ba_problem(keyframes: usize, seed: u64) -> (RunConfig, FullState, Factors) {
    let (cfg, d) = nominal_dataset(keyframes, seed);
    let kfs = keyframe_prefix(&cfg, &d, keyframes);
    let init = initialize_batch(&kfs, &InitPolicy::default()).expect("initialization");
    let (state, factors) =
        problem_from_initialization(&init, &frame_observations(&d), &d.intrinsics, &ProblemConfig::default())
            .expect("problem");
    (cfg, state, factors)
}
