//! Spatial-temporal camera-IMU calibration and visual-inertial initialization.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod imu;
pub mod initializer;
pub mod lie;
pub mod pipeline;
pub mod sim;
pub mod sweep;
pub mod temporal;

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use camera::{CameraIntrinsics, Vec2};
pub use error::*;
pub use imu::{ImuBias, ImuNoiseSpec, ImuSample, PreintegratedImu};
pub use lie::{Mat3, Rotation, Vec3};
pub use sim::{RigConfig, SyntheticDataset, TrajectoryConfig};
pub use temporal::{
    camera_from_imu, camera_twist, imu_from_camera, interpolate_camera, interpolate_imu, CameraPoseUpToScale,
    CameraTwist, Extrinsics, ImuState, TimeOffset,
};
