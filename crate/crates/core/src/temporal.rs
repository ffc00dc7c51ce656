//! Camera/IMU clock offset and the short-term constant-velocity motion
//! interpolators relating the two sensors.
//!
//! Convention: a camera frame stamped `t` was exposed at IMU time `t - td`,
//! so the body pose at IMU time `t` equals the camera pose at camera time
//! `t + td` composed with the camera-to-body transform.

use crate::error::TemporalError;
use crate::lie::{exp_so3, Rotation, Vec3};

/// Largest offset magnitude for which constant-velocity interpolation is trusted.
pub const DEFAULT_MAX_OFFSET: f64 = 0.5;

/// Minimum spacing between two poses for a finite-difference twist.
pub const MIN_TWIST_INTERVAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeOffset {
    td: f64,
}

impl TimeOffset {
    pub fn new(td: f64) -> Result<Self, TemporalError> {
        Self::with_cap(td, DEFAULT_MAX_OFFSET)
    }

    pub fn with_cap(td: f64, max: f64) -> Result<Self, TemporalError> {
        if !td.is_finite() || td.abs() > max {
            return Err(TemporalError::OffsetOutOfRange { td, max });
        }
        Ok(Self { td })
    }

    pub fn zero() -> Self {
        Self { td: 0.0 }
    }

    pub fn seconds(&self) -> f64 {
        self.td
    }
}

/// Camera pose from a monocular front-end; positions carry an unknown scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoseUpToScale {
    pub rotation: Rotation,
    pub position: Vec3,
    pub timestamp: f64,
}

/// Angular velocity (camera frame) and scale-ambiguous world-frame linear
/// velocity of the camera.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CameraTwist {
    pub omega: Vec3,
    pub v_tilde: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuState {
    pub rotation: Rotation,
    pub position: Vec3,
    pub velocity: Vec3,
    pub timestamp: f64,
}

/// Camera pose expressed in the IMU body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub r_bc: Rotation,
    pub p_bc: Vec3,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self { r_bc: Rotation::identity(), p_bc: Vec3::zeros() }
    }
}

impl Extrinsics {
    pub fn new(r_bc: Rotation, p_bc: Vec3) -> Self {
        Self { r_bc, p_bc }
    }

    pub fn r_cb(&self) -> Rotation {
        self.r_bc.transpose()
    }

    /// Body origin expressed in the camera frame.
    pub fn p_cb(&self) -> Vec3 {
        -(self.r_cb() * self.p_bc)
    }

    /// Builds the pair from the body-in-camera translation.
    pub fn from_p_cb(r_bc: Rotation, p_cb: Vec3) -> Self {
        Self { r_bc, p_bc: -(r_bc * p_cb) }
    }
}

/// Forward-difference twist between two consecutive poses.
pub fn camera_twist(
    a: &CameraPoseUpToScale,
    b: &CameraPoseUpToScale,
) -> Result<CameraTwist, TemporalError> {
    let dt = b.timestamp - a.timestamp;
    if !(dt >= MIN_TWIST_INTERVAL) {
        return Err(TemporalError::DegenerateInterval { dt });
    }
    Ok(CameraTwist {
        omega: (a.rotation.transpose() * b.rotation).log() / dt,
        v_tilde: (b.position - a.position) / dt,
    })
}

/// Camera pose `td` seconds after `a`, assuming a constant twist.
pub fn interpolate_camera(a: &CameraPoseUpToScale, tw: &CameraTwist, td: f64) -> CameraPoseUpToScale {
    CameraPoseUpToScale {
        rotation: a.rotation * exp_so3(&(tw.omega * td)),
        position: a.position + tw.v_tilde * td,
        timestamp: a.timestamp + td,
    }
}

/// IMU pose `td` seconds before `s`, assuming constant body rates.
pub fn interpolate_imu(s: &ImuState, omega_body: &Vec3, td: f64) -> ImuState {
    ImuState {
        rotation: s.rotation * exp_so3(&(-omega_body * td)),
        position: s.position - s.velocity * td,
        velocity: s.velocity,
        timestamp: s.timestamp - td,
    }
}

/// Metric body pose at IMU time `c.timestamp` from the camera pose stamped
/// at the same value.
pub fn imu_from_camera(
    c: &CameraPoseUpToScale,
    tw: &CameraTwist,
    td: f64,
    s: f64,
    ex: &Extrinsics,
) -> (Rotation, Vec3) {
    let r_wc_td = c.rotation * exp_so3(&(tw.omega * td));
    let rotation = r_wc_td * ex.r_cb();
    let position = r_wc_td * ex.p_cb() + (c.position + tw.v_tilde * td) * s;
    (rotation, position)
}

/// Camera pose at camera time `s.timestamp` from the body state stamped at
/// the same value.
pub fn camera_from_imu(s: &ImuState, omega_body: &Vec3, td: f64, ex: &Extrinsics) -> (Rotation, Vec3) {
    let r_wb_td = s.rotation * exp_so3(&(-omega_body * td));
    (r_wb_td * ex.r_bc, r_wb_td * ex.p_bc + s.position - s.velocity * td)
}
