//! Offset-aware visual-inertial bundle adjustment.
//!
//! Each keyframe holds body rotation, position, velocity and biases at its
//! (compensated) camera stamp read as IMU time. Observations happened `td`
//! earlier on the IMU clock, so points are mapped into the camera through a
//! constant-velocity shift of the body pose by `td`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, SMatrix, SVector, Vector2};

use crate::camera::{CameraIntrinsics, Vec2, MIN_DEPTH};
use crate::error::EstimatorError;
use crate::imu::{ImuBias, PreintegratedImu};
use crate::initializer::InitializationResult;
use crate::lie::{exp_so3, hat, right_jacobian, right_jacobian_inv, Mat3, Rotation, Vec3};
use crate::temporal::Extrinsics;

pub type Mat2x6 = SMatrix<f64, 2, 6>;
pub type Mat2x9 = SMatrix<f64, 2, 9>;
pub type Mat9x6 = SMatrix<f64, 9, 6>;
pub type Mat9x9 = SMatrix<f64, 9, 9>;
pub type Vec9 = SVector<f64, 9>;
pub type Vec6 = SVector<f64, 6>;

/// Huber threshold on the whitened squared reprojection error (2 DoF, 95%).
pub const PIXEL_HUBER: f64 = 5.991;
/// Huber threshold on the whitened squared preintegration error (9 DoF, 95%).
pub const IMU_HUBER: f64 = 16.92;

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeState {
    pub rotation: Rotation,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Absolute biases; corrections are taken against each segment's reference bias.
    pub bias: ImuBias,
    pub timestamp: f64,
    /// Raw gyro reading used for the offset shift.
    pub gyro: Vec3,
    /// `(landmark slot, pixel)` pairs.
    pub observations: Vec<(usize, Vec2)>,
}

impl KeyframeState {
    /// Bias-corrected angular rate.
    pub fn omega(&self) -> Vec3 {
        self.gyro - self.bias.gyro
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub keyframes: Vec<KeyframeState>,
    pub landmarks: Vec<Vec3>,
    pub extrinsics: Extrinsics,
    /// Residual clock offset of the keyframe stamps.
    pub td: f64,
}

impl FullState {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        for (i, k) in self.keyframes.iter().enumerate() {
            if k.rotation.orthonormality_defect() > 1e-6 {
                return Err(EstimatorError::InvalidState(format!("keyframe {i} rotation is not orthonormal")));
            }
            if let Some((l, _)) = k.observations.iter().find(|(l, _)| *l >= self.landmarks.len()) {
                return Err(EstimatorError::InvalidState(format!("keyframe {i} observes missing landmark {l}")));
            }
        }
        Ok(())
    }
}

/// Measurements that stay fixed during optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    /// `segments[k]` links keyframe `k` to `k + 1`.
    pub segments: Vec<PreintegratedImu>,
    pub gravity: Vec3,
    pub intrinsics: CameraIntrinsics,
    pub pixel_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustCost {
    Huber { threshold: f64 },
    None,
}

impl RobustCost {
    pub fn huber(threshold: f64) -> Self {
        assert!(threshold > 0.0, "Huber threshold must be positive");
        RobustCost::Huber { threshold }
    }

    /// Robustified value of a whitened squared norm.
    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            RobustCost::Huber { threshold } if s > threshold => 2.0 * (threshold * s).sqrt() - threshold,
            _ => s,
        }
    }

    /// Derivative of `rho`, used as the reweighting factor.
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            RobustCost::Huber { threshold } if s > threshold => (threshold / s).sqrt(),
            _ => 1.0,
        }
    }
}

// ---------------------------------------------------------------- reprojection

/// Derivatives of a camera-frame point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointJacobians {
    /// Body `[dphi, dp]`.
    pub pose: SMatrix<f64, 3, 6>,
    /// `[dv, dbg, dba]`; the accelerometer columns are zero.
    pub motion: SMatrix<f64, 3, 9>,
    /// Extrinsic `[dphi_bc, dp_bc]`.
    pub extrinsics: SMatrix<f64, 3, 6>,
    pub td: Vec3,
    pub landmark: Mat3,
}

/// Landmark `k` in the camera frame of keyframe `i`.
pub fn transform_point_to_camera(state: &FullState, i: usize, k: usize) -> Vec3 {
    point_in_camera(&state.keyframes[i], &state.landmarks[k], &state.extrinsics, state.td).0
}

fn point_in_camera(kf: &KeyframeState, pw: &Vec3, ex: &Extrinsics, td: f64) -> (Vec3, PointJacobians) {
    let r_cb = *ex.r_cb().matrix();
    let p_cb = ex.p_cb();
    let w = kf.omega();
    let e = exp_so3(&(w * td));
    let rwb_t = kf.rotation.matrix().transpose();
    let c = pw - kf.position + kf.velocity * td;
    let body = rwb_t * c;
    let a = r_cb * e.matrix();
    let pc = a * body + p_cb;

    let mut pose = SMatrix::<f64, 3, 6>::zeros();
    pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(a * hat(&body)));
    pose.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-a));
    let mut motion = SMatrix::<f64, 3, 9>::zeros();
    motion.fixed_view_mut::<3, 3>(0, 0).copy_from(&(a * rwb_t * td));
    motion.fixed_view_mut::<3, 3>(0, 3).copy_from(&(a * hat(&body) * right_jacobian(&(w * td)) * td));
    let mut extrinsics = SMatrix::<f64, 3, 6>::zeros();
    extrinsics.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&pc));
    extrinsics.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Mat3::identity()));
    let d_td = a * (rwb_t * kf.velocity + hat(&(right_jacobian(&(w * td)) * w)) * body);
    let jac = PointJacobians { pose, motion, extrinsics, td: d_td, landmark: a * rwb_t };
    (pc, jac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionTerm {
    /// Measured minus predicted pixel.
    pub residual: Vec2,
    /// Robustified whitened squared residual.
    pub cost: f64,
    pub pose: Mat2x6,
    pub motion: Mat2x9,
    pub extrinsics: Mat2x6,
    pub td: Vector2<f64>,
    pub landmark: Matrix2x3<f64>,
}

/// Reprojection residual of observation `obs` of keyframe `i`.
pub fn reprojection_residual(
    state: &FullState,
    i: usize,
    obs: usize,
    intrinsics: &CameraIntrinsics,
    pixel_sigma: f64,
    robust: RobustCost,
) -> Result<ReprojectionTerm, EstimatorError> {
    let kf = &state.keyframes[i];
    let (k, u) = kf.observations[obs];
    let (pc, j) = point_in_camera(kf, &state.landmarks[k], &state.extrinsics, state.td);
    if pc.z <= MIN_DEPTH {
        return Err(EstimatorError::PointBehindCamera { z: pc.z });
    }
    let proj = intrinsics.project(&pc).expect("in front of camera");
    let residual = u - proj;
    let dr = -intrinsics.project_jacobian(&pc);
    let s = residual.norm_squared() / (pixel_sigma * pixel_sigma);
    Ok(ReprojectionTerm {
        residual,
        cost: robust.rho(s),
        pose: dr * j.pose,
        motion: dr * j.motion,
        extrinsics: dr * j.extrinsics,
        td: dr * j.td,
        landmark: dr * j.landmark,
    })
}

// ---------------------------------------------------------------- inertial

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImuWeighting {
    /// Inverse of the full propagated covariance.
    Full,
    /// Cross-covariances between rotation, velocity and position dropped.
    BlockDiagonal,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuTerm {
    /// `[e_R, e_v, e_p]`.
    pub residual: Vec9,
    /// `[e_bg, e_ba]`.
    pub bias_residual: Vec6,
    pub cost: f64,
    pub pose_i: Mat9x6,
    pub motion_i: Mat9x9,
    pub pose_j: Mat9x6,
    pub motion_j: Mat9x9,
}

impl ImuTerm {
    /// Jacobian of the bias residual with respect to `[motion_i | motion_j]`.
    pub fn bias_jacobians() -> (SMatrix<f64, 6, 9>, SMatrix<f64, 6, 9>) {
        let mut a = SMatrix::<f64, 6, 9>::zeros();
        let mut b = SMatrix::<f64, 6, 9>::zeros();
        for d in 0..6 {
            a[(d, 3 + d)] = -1.0;
            b[(d, 3 + d)] = 1.0;
        }
        (a, b)
    }
}

fn imu_information(pre: &PreintegratedImu, mode: ImuWeighting) -> SMatrix<f64, 9, 9> {
    match mode {
        ImuWeighting::Full => pre.info_preint,
        ImuWeighting::BlockDiagonal => pre.block_diagonal_information(),
        ImuWeighting::Identity => SMatrix::<f64, 9, 9>::identity(),
    }
}

/// Preintegration and bias random-walk residuals between keyframes `a` and `b`.
pub fn imu_residual(
    a: &KeyframeState,
    b: &KeyframeState,
    pre: &PreintegratedImu,
    gravity: &Vec3,
    weighting: ImuWeighting,
    robust: RobustCost,
) -> ImuTerm {
    let dt = pre.dt;
    let dbg = a.bias.gyro - pre.bias_ref.gyro;
    let dba = a.bias.accel - pre.bias_ref.accel;
    let (dr, dv, dp) = pre.bias_corrected_terms(&dbg, &dba);
    let ri_t = a.rotation.matrix().transpose();
    let rel = a.rotation.transpose() * b.rotation;
    let m = dr.transpose() * rel;
    let e_r = m.log();
    let vv = b.velocity - a.velocity - gravity * dt;
    let pp = b.position - a.position - a.velocity * dt - 0.5 * gravity * dt * dt;
    let e_v = ri_t * vv - dv;
    let e_p = ri_t * pp - dp;
    let jr_inv = right_jacobian_inv(&e_r);

    let mut pose_i = Mat9x6::zeros();
    pose_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr_inv * rel.transpose().matrix()));
    pose_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat(&(ri_t * vv)));
    pose_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&hat(&(ri_t * pp)));
    pose_i.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-Mat3::identity()));

    let mut motion_i = Mat9x9::zeros();
    motion_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ri_t));
    motion_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-ri_t * dt));
    let d_er_bg = -jr_inv * m.transpose().matrix() * right_jacobian(&(pre.jg_dr * dbg)) * pre.jg_dr;
    motion_i.fixed_view_mut::<3, 3>(0, 3).copy_from(&d_er_bg);
    motion_i.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-pre.jg_dv));
    motion_i.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-pre.ja_dv));
    motion_i.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-pre.jg_dp));
    motion_i.fixed_view_mut::<3, 3>(6, 6).copy_from(&(-pre.ja_dp));

    let mut pose_j = Mat9x6::zeros();
    pose_j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    pose_j.fixed_view_mut::<3, 3>(6, 3).copy_from(&(ri_t * b.rotation.matrix()));
    let mut motion_j = Mat9x9::zeros();
    motion_j.fixed_view_mut::<3, 3>(3, 0).copy_from(&ri_t);

    let mut residual = Vec9::zeros();
    residual.fixed_rows_mut::<3>(0).copy_from(&e_r);
    residual.fixed_rows_mut::<3>(3).copy_from(&e_v);
    residual.fixed_rows_mut::<3>(6).copy_from(&e_p);
    let mut bias_residual = Vec6::zeros();
    bias_residual.fixed_rows_mut::<3>(0).copy_from(&(b.bias.gyro - a.bias.gyro));
    bias_residual.fixed_rows_mut::<3>(3).copy_from(&(b.bias.accel - a.bias.accel));

    let s = (residual.transpose() * imu_information(pre, weighting) * residual)[0];
    let sb = (bias_residual.transpose() * pre.info_walk * bias_residual)[0];
    ImuTerm { residual, bias_residual, cost: robust.rho(s) + sb, pose_i, motion_i, pose_j, motion_j }
}

// ---------------------------------------------------------------- parameters

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    Global,
    /// Only the newest `window` keyframes are free.
    Local { window: usize },
}

/// Offsets of the free variables in the stacked perturbation
/// `[keyframes..., extrinsics, td, landmarks...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    /// Offset of `[dphi, dp]` per keyframe.
    pub pose: Vec<Option<usize>>,
    /// Offset of `[dv, dbg, dba]` per keyframe.
    pub motion: Vec<Option<usize>>,
    pub extrinsics: Option<usize>,
    pub td: Option<usize>,
    /// Offsets within the landmark part (after `camera_dim`).
    pub landmarks: Vec<Option<usize>>,
    pub camera_dim: usize,
    pub landmark_dim: usize,
}

impl ParameterLayout {
    pub fn new(state: &FullState, mode: WindowMode, extrinsics: bool, offset: bool) -> Self {
        let n = state.keyframes.len();
        let first_free = match mode {
            WindowMode::Global => 0,
            WindowMode::Local { window } => n.saturating_sub(window.max(1)),
        };
        let mut off = 0;
        let mut pose = vec![None; n];
        let mut motion = vec![None; n];
        for k in first_free..n {
            // in global mode the first pose is the gauge anchor
            if !(mode == WindowMode::Global && k == 0) {
                pose[k] = Some(off);
                off += 6;
            }
            motion[k] = Some(off);
            off += 9;
        }
        let extrinsics = extrinsics.then(|| {
            off += 6;
            off - 6
        });
        let td = offset.then(|| {
            off += 1;
            off - 1
        });
        let mut seen = vec![false; state.landmarks.len()];
        for kf in &state.keyframes[first_free..] {
            for (l, _) in &kf.observations {
                seen[*l] = true;
            }
        }
        let mut loff = 0;
        let landmarks = seen
            .iter()
            .map(|s| {
                s.then(|| {
                    loff += 3;
                    loff - 3
                })
            })
            .collect();
        Self { pose, motion, extrinsics, td, landmarks, camera_dim: off, landmark_dim: loff }
    }

    pub fn dim(&self) -> usize {
        self.camera_dim + self.landmark_dim
    }
}

/// Applies a stacked perturbation: rotations right-multiplied by
/// exponentials, body positions moved along the body axes, extrinsic
/// translation along the body axes, everything else additive.
pub fn retract(state: &FullState, layout: &ParameterLayout, delta: &DVector<f64>) -> Result<FullState, EstimatorError> {
    if delta.len() != layout.dim() {
        return Err(EstimatorError::DimensionMismatch { expected: layout.dim(), got: delta.len() });
    }
    let v3 = |o: usize| Vec3::new(delta[o], delta[o + 1], delta[o + 2]);
    let mut out = state.clone();
    for (k, kf) in out.keyframes.iter_mut().enumerate() {
        if let Some(o) = layout.pose[k] {
            let r = kf.rotation;
            kf.rotation = r * exp_so3(&v3(o));
            kf.position += r * v3(o + 3);
        }
        if let Some(o) = layout.motion[k] {
            kf.velocity += v3(o);
            kf.bias.gyro += v3(o + 3);
            kf.bias.accel += v3(o + 6);
        }
    }
    if let Some(o) = layout.extrinsics {
        let r = out.extrinsics.r_bc;
        out.extrinsics.r_bc = r * exp_so3(&v3(o));
        out.extrinsics.p_bc += r * v3(o + 3);
    }
    if let Some(o) = layout.td {
        out.td += delta[o];
    }
    for (l, p) in out.landmarks.iter_mut().enumerate() {
        if let Some(o) = layout.landmarks[l] {
            *p += v3(layout.camera_dim + o);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- solver

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub mode: WindowMode,
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub relative_tolerance: f64,
    pub pixel_robust: RobustCost,
    pub imu_robust: RobustCost,
    pub imu_weighting: ImuWeighting,
    pub estimate_extrinsics: bool,
    pub estimate_offset: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            mode: WindowMode::Global,
            max_iterations: 30,
            initial_lambda: 1e-4,
            relative_tolerance: 1e-10,
            pixel_robust: RobustCost::huber(PIXEL_HUBER),
            imu_robust: RobustCost::huber(IMU_HUBER),
            imu_weighting: ImuWeighting::Full,
            estimate_extrinsics: true,
            estimate_offset: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    /// Observations skipped because the point fell behind the camera.
    pub dropped_observations: usize,
    pub free_parameters: usize,
    pub gauge: String,
    pub converged: bool,
}

/// Total robustified cost and the number of observations behind the camera.
pub fn total_cost(state: &FullState, factors: &Factors, cfg: &OptimizeConfig) -> (f64, usize) {
    let mut cost = 0.0;
    let mut dropped = 0;
    for (i, kf) in state.keyframes.iter().enumerate() {
        for o in 0..kf.observations.len() {
            match reprojection_residual(state, i, o, &factors.intrinsics, factors.pixel_sigma, cfg.pixel_robust) {
                Ok(t) => cost += t.cost,
                Err(_) => dropped += 1,
            }
        }
    }
    for (k, pre) in factors.segments.iter().enumerate().take(state.keyframes.len().saturating_sub(1)) {
        let t = imu_residual(
            &state.keyframes[k],
            &state.keyframes[k + 1],
            pre,
            &factors.gravity,
            cfg.imu_weighting,
            cfg.imu_robust,
        );
        cost += t.cost;
    }
    (cost, dropped)
}

struct LandmarkBlock {
    slot: usize,
    hll: Mat3,
    bl: Vec3,
    /// Coupling rows keyed by camera-side parameter index.
    hcl: BTreeMap<usize, SMatrix<f64, 1, 3>>,
}

struct NormalEquations {
    hcc: DMatrix<f64>,
    bc: DVector<f64>,
    landmarks: Vec<LandmarkBlock>,
}

/// Camera-side columns of a residual: `(offset, jacobian block)`.
type Blocks = Vec<(usize, DMatrix<f64>)>;

fn add_camera(
    hcc: &mut DMatrix<f64>,
    bc: &mut DVector<f64>,
    blocks: &Blocks,
    w: &DMatrix<f64>,
    r: &DVector<f64>,
) {
    for (oa, ja) in blocks {
        let jtw = ja.transpose() * w;
        let mut g = bc.rows_mut(*oa, ja.ncols());
        g += &jtw * r;
        for (ob, jb) in blocks {
            let mut h = hcc.view_mut((*oa, *ob), (ja.ncols(), jb.ncols()));
            h += &jtw * jb;
        }
    }
}

fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn build_normal_equations(
    state: &FullState,
    factors: &Factors,
    layout: &ParameterLayout,
    cfg: &OptimizeConfig,
) -> NormalEquations {
    let nc = layout.camera_dim;
    let mut hcc = DMatrix::zeros(nc, nc);
    let mut bc = DVector::zeros(nc);
    let mut lms: Vec<Option<LandmarkBlock>> = (0..state.landmarks.len())
        .map(|slot| {
            layout.landmarks[slot].map(|_| LandmarkBlock { slot, hll: Mat3::zeros(), bl: Vec3::zeros(), hcl: BTreeMap::new() })
        })
        .collect();
    let info_px = 1.0 / (factors.pixel_sigma * factors.pixel_sigma);

    for (i, kf) in state.keyframes.iter().enumerate() {
        for (o, (slot, _)) in kf.observations.iter().enumerate() {
            let Ok(t) = reprojection_residual(state, i, o, &factors.intrinsics, factors.pixel_sigma, cfg.pixel_robust)
            else {
                continue;
            };
            let s = t.residual.norm_squared() * info_px;
            let w = cfg.pixel_robust.weight(s) * info_px;
            let mut blocks: Blocks = Vec::with_capacity(4);
            if let Some(off) = layout.pose[i] {
                blocks.push((off, to_dyn(&t.pose)));
            }
            if let Some(off) = layout.motion[i] {
                // accelerometer-bias columns are identically zero
                blocks.push((off, to_dyn(&t.motion.fixed_columns::<6>(0).into_owned())));
            }
            if let Some(off) = layout.extrinsics {
                blocks.push((off, to_dyn(&t.extrinsics)));
            }
            if let Some(off) = layout.td {
                blocks.push((off, to_dyn(&t.td)));
            }
            let r = DVector::from_column_slice(t.residual.as_slice());
            let wm = DMatrix::from_diagonal_element(2, 2, w);
            add_camera(&mut hcc, &mut bc, &blocks, &wm, &r);
            if let Some(lb) = lms[*slot].as_mut() {
                let jl = t.landmark;
                lb.hll += jl.transpose() * jl * w;
                lb.bl += jl.transpose() * t.residual * w;
                for (off, jc) in &blocks {
                    let cross = jc.transpose() * DMatrix::from_column_slice(2, 3, jl.as_slice()) * w;
                    for c in 0..jc.ncols() {
                        let row = SMatrix::<f64, 1, 3>::new(cross[(c, 0)], cross[(c, 1)], cross[(c, 2)]);
                        *lb.hcl.entry(off + c).or_insert_with(SMatrix::zeros) += row;
                    }
                }
            }
        }
    }

    let (bias_a, bias_b) = ImuTerm::bias_jacobians();
    for (k, pre) in factors.segments.iter().enumerate().take(state.keyframes.len().saturating_sub(1)) {
        let t = imu_residual(
            &state.keyframes[k],
            &state.keyframes[k + 1],
            pre,
            &factors.gravity,
            cfg.imu_weighting,
            cfg.imu_robust,
        );
        let info = imu_information(pre, cfg.imu_weighting);
        let s = (t.residual.transpose() * info * t.residual)[0];
        let w = to_dyn(&(info * cfg.imu_robust.weight(s)));
        let mut blocks: Blocks = Vec::with_capacity(4);
        if let Some(o) = layout.pose[k] {
            blocks.push((o, to_dyn(&t.pose_i)));
        }
        if let Some(o) = layout.motion[k] {
            blocks.push((o, to_dyn(&t.motion_i)));
        }
        if let Some(o) = layout.pose[k + 1] {
            blocks.push((o, to_dyn(&t.pose_j)));
        }
        if let Some(o) = layout.motion[k + 1] {
            blocks.push((o, to_dyn(&t.motion_j)));
        }
        add_camera(&mut hcc, &mut bc, &blocks, &w, &DVector::from_column_slice(t.residual.as_slice()));

        let mut bblocks: Blocks = Vec::with_capacity(2);
        if let Some(o) = layout.motion[k] {
            bblocks.push((o, to_dyn(&bias_a)));
        }
        if let Some(o) = layout.motion[k + 1] {
            bblocks.push((o, to_dyn(&bias_b)));
        }
        let wb = to_dyn(&pre.info_walk);
        add_camera(&mut hcc, &mut bc, &bblocks, &wb, &DVector::from_column_slice(t.bias_residual.as_slice()));
    }
    NormalEquations { hcc, bc, landmarks: lms.into_iter().flatten().collect() }
}

/// Damped step through the Schur complement on the landmarks.
fn solve_damped(ne: &NormalEquations, layout: &ParameterLayout, lambda: f64) -> Option<DVector<f64>> {
    let nc = layout.camera_dim;
    let floor = 1e-12 * ne.hcc.diagonal().amax().max(1.0);
    let mut s = ne.hcc.clone();
    for d in 0..nc {
        s[(d, d)] += lambda * ne.hcc[(d, d)].max(floor);
    }
    let mut rhs = -&ne.bc;
    let mut inverses = Vec::with_capacity(ne.landmarks.len());
    for lb in &ne.landmarks {
        let mut h = lb.hll;
        for d in 0..3 {
            h[(d, d)] += lambda * lb.hll[(d, d)].max(floor) + 1e-12;
        }
        let inv = h.try_inverse()?;
        let idx: Vec<usize> = lb.hcl.keys().copied().collect();
        let w = DMatrix::from_fn(idx.len(), 3, |r, c| lb.hcl[&idx[r]][c]);
        let winv = &w * DMatrix::from_column_slice(3, 3, inv.as_slice());
        let upd = &winv * w.transpose();
        for (a, ia) in idx.iter().enumerate() {
            for (b, ib) in idx.iter().enumerate() {
                s[(*ia, *ib)] -= upd[(a, b)];
            }
        }
        let rb = &winv * DVector::from_column_slice(lb.bl.as_slice());
        for (a, ia) in idx.iter().enumerate() {
            rhs[*ia] += rb[a];
        }
        inverses.push((inv, idx));
    }
    let dc = if nc > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    let mut delta = DVector::zeros(layout.dim());
    delta.rows_mut(0, nc).copy_from(&dc);
    for (lb, (inv, idx)) in ne.landmarks.iter().zip(&inverses) {
        let mut r = -lb.bl;
        for ia in idx {
            let row = lb.hcl[ia];
            r -= row.transpose() * dc[*ia];
        }
        let dl = inv * r;
        let o = nc + layout.landmarks[lb.slot].expect("free landmark");
        delta.rows_mut(o, 3).copy_from(&dl);
    }
    delta.iter().all(|x| x.is_finite()).then_some(delta)
}

/// Levenberg-Marquardt over the free part of the state.
pub fn optimize(
    state: &FullState,
    factors: &Factors,
    cfg: &OptimizeConfig,
) -> Result<(FullState, OptimizeReport), EstimatorError> {
    state.validate()?;
    if factors.segments.len() + 1 < state.keyframes.len() {
        return Err(EstimatorError::InvalidState(format!(
            "{} keyframes need {} inertial segments, got {}",
            state.keyframes.len(),
            state.keyframes.len() - 1,
            factors.segments.len()
        )));
    }
    let layout = ParameterLayout::new(state, cfg.mode, cfg.estimate_extrinsics, cfg.estimate_offset);
    let gauge = match cfg.mode {
        WindowMode::Global => "first keyframe pose fixed; gravity fixed".to_string(),
        WindowMode::Local { window } => format!("keyframes before the newest {window} fixed; gravity fixed"),
    };
    let mut x = state.clone();
    let (mut cost, mut dropped) = total_cost(&x, factors, cfg);
    let mut report = OptimizeReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: 0,
        accepted_steps: 0,
        cost_trace: vec![cost],
        dropped_observations: dropped,
        free_parameters: layout.dim(),
        gauge,
        converged: false,
    };
    let mut lambda = cfg.initial_lambda;
    let mut last_rel = f64::INFINITY;
    'outer: for it in 0..cfg.max_iterations {
        report.iterations = it + 1;
        if cost < 1e-20 {
            report.converged = true;
            break;
        }
        let ne = build_normal_equations(&x, factors, &layout, cfg);
        loop {
            let Some(delta) = solve_damped(&ne, &layout, lambda) else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    if report.accepted_steps == 0 {
                        return Err(EstimatorError::SingularNormalEquations);
                    }
                    report.converged = true;
                    break 'outer;
                }
                continue;
            };
            let trial = retract(&x, &layout, &delta)?;
            let (tcost, tdropped) = total_cost(&trial, factors, cfg);
            if tcost.is_finite() && tcost < cost {
                let rel = (cost - tcost) / cost;
                x = trial;
                cost = tcost;
                dropped = tdropped;
                report.accepted_steps += 1;
                report.cost_trace.push(cost);
                lambda = (lambda / 10.0).max(1e-10);
                last_rel = rel;
                if rel < cfg.relative_tolerance {
                    report.converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                report.converged = true;
                break 'outer;
            }
        }
    }
    if !report.converged && last_rel < 1e-6 {
        report.converged = true;
    }
    report.final_cost = cost;
    report.dropped_observations = dropped;
    if !report.converged && last_rel > 1e-3 {
        return Err(EstimatorError::NotConverged { iterations: report.iterations });
    }
    Ok((x, report))
}

// ---------------------------------------------------------------- problem setup

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub max_landmarks: usize,
    pub min_observations: usize,
    pub pixel_sigma: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { max_landmarks: 300, min_observations: 3, pixel_sigma: 1.0 }
    }
}

/// Linear triangulation from camera centers and unit bearings in world frame.
pub fn triangulate(rays: &[(Vec3, Vec3)]) -> Option<Vec3> {
    if rays.len() < 2 {
        return None;
    }
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for (c, d) in rays {
        let p = Mat3::identity() - d * d.transpose();
        a += p;
        b += p * c;
    }
    let eig = a.symmetric_eigenvalues();
    if eig.min() < 1e-6 * eig.max() {
        return None;
    }
    a.try_inverse().map(|inv| inv * b)
}

/// Builds a bundle-adjustment problem from an initialization result.
///
/// `frame_observations[f]` holds `(landmark id, pixel)` pairs of camera
/// frame `f`, where `f` is the keyframe's source index. The best-observed
/// landmarks are triangulated from the initialized poses.
pub fn problem_from_initialization(
    init: &InitializationResult,
    frame_observations: &[Vec<(usize, Vec2)>],
    intrinsics: &CameraIntrinsics,
    cfg: &ProblemConfig,
) -> Result<(FullState, Factors), EstimatorError> {
    let kfs = init.keyframes.keyframes();
    let ex = init.extrinsics;
    let s = init.step3.scale;
    let bias = init.bias();
    let mut states = Vec::with_capacity(kfs.len());
    for (k, kf) in kfs.iter().enumerate() {
        let r_wc = kf.pose.rotation;
        let rotation = Rotation::project(&(r_wc * ex.r_cb()).matrix().clone_owned());
        let position = s * kf.pose.position + r_wc * ex.p_cb();
        states.push(KeyframeState {
            rotation,
            position,
            velocity: init.velocities[k],
            bias,
            timestamp: kf.pose.timestamp,
            gyro: kf.gyro,
            observations: Vec::new(),
        });
    }

    let mut tracks: BTreeMap<usize, Vec<(usize, Vec2)>> = BTreeMap::new();
    for (k, kf) in kfs.iter().enumerate() {
        let Some(obs) = frame_observations.get(kf.source) else {
            return Err(EstimatorError::InvalidState(format!("no observations for frame {}", kf.source)));
        };
        for (id, u) in obs {
            tracks.entry(*id).or_default().push((k, *u));
        }
    }
    let mut ranked: Vec<(usize, Vec<(usize, Vec2)>)> =
        tracks.into_iter().filter(|(_, t)| t.len() >= cfg.min_observations).collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut landmarks = Vec::new();
    for (_, track) in ranked {
        if landmarks.len() >= cfg.max_landmarks {
            break;
        }
        let rays: Vec<(Vec3, Vec3)> = track
            .iter()
            .map(|(k, u)| {
                let st = &states[*k];
                let r_wc = st.rotation * ex.r_bc;
                let c = st.position + st.rotation * ex.p_bc;
                let bearing = Vec3::new((u.x - intrinsics.cx) / intrinsics.fx, (u.y - intrinsics.cy) / intrinsics.fy, 1.0);
                (c, (r_wc * bearing).normalize())
            })
            .collect();
        let Some(p) = triangulate(&rays) else { continue };
        let in_front = track.iter().all(|(k, _)| {
            let st = &states[*k];
            let pc = ex.r_cb() * (st.rotation.transpose() * (p - st.position)) + ex.p_cb();
            pc.z > MIN_DEPTH
        });
        if !in_front {
            continue;
        }
        let slot = landmarks.len();
        landmarks.push(p);
        for (k, u) in track {
            states[k].observations.push((slot, u));
        }
    }
    let segments = kfs.iter().filter_map(|k| k.preint.clone()).collect();
    let state = FullState { keyframes: states, landmarks, extrinsics: ex, td: 0.0 };
    let factors = Factors { segments, gravity: init.step3.gravity, intrinsics: *intrinsics, pixel_sigma: cfg.pixel_sigma };
    Ok((state, factors))
}
