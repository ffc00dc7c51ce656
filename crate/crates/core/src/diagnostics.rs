//! Analytic Jacobians checked against central differences at random points.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraIntrinsics, Vec2};
use crate::estimator::{
    imu_residual, reprojection_residual, retract, FullState, ImuTerm, ImuWeighting, KeyframeState, ParameterLayout,
    RobustCost,
};
use crate::imu::{ImuBias, ImuNoiseSpec, PreintegratedImu, Preintegrator};
use crate::initializer::{rotation_residual, Keyframe};
use crate::lie::{exp_so3, Vec3};
use crate::temporal::{CameraPoseUpToScale, CameraTwist, Extrinsics};

const STEP: f64 = 1e-6;
/// Norm below which a block counts as zero when forming relative errors.
const NORM_FLOOR: f64 = 1e-6;

/// Worst relative error of one Jacobian block over all sampled points.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub residual: &'static str,
    pub block: &'static str,
    pub max_relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub points: usize,
    pub blocks: Vec<BlockError>,
}

impl JacobianReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_relative).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst() < tolerance
    }
}

impl fmt::Display for JacobianReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} points per residual", self.points)?;
        for b in &self.blocks {
            writeln!(f, "{:<14} {:<12} {:.3e}", b.residual, b.block, b.max_relative)?;
        }
        Ok(())
    }
}

/// `‖analytic − numeric‖_F / max(‖numeric‖_F, ‖analytic‖_F)`, zero when both vanish.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let scale = numeric.norm().max(analytic.norm());
    if scale < NORM_FLOOR {
        return 0.0;
    }
    (analytic - numeric).norm() / scale
}

fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn random_segment(rng: &mut ChaCha8Rng, bias_ref: ImuBias, t0: f64) -> PreintegratedImu {
    let mut p = Preintegrator::new(bias_ref, ImuNoiseSpec::nominal(), t0);
    for _ in 0..rng.random_range(5..40) {
        p.integrate(&rv(rng, 1.0), &(Vec3::new(0.0, 0.0, 9.81) + rv(rng, 2.0)), 0.005);
    }
    p.finish()
}

struct Tracker {
    residual: &'static str,
    names: &'static [&'static str],
    worst: Vec<f64>,
}

impl Tracker {
    fn new(residual: &'static str, names: &'static [&'static str]) -> Self {
        Self { residual, names, worst: vec![0.0; names.len()] }
    }

    /// `bounds[k]` is the column range of block `k` in both matrices.
    fn record(&mut self, analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, bounds: &[(usize, usize)]) {
        for (k, &(c0, n)) in bounds.iter().enumerate() {
            let a = analytic.columns(c0, n).into_owned();
            let f = numeric.columns(c0, n).into_owned();
            self.worst[k] = self.worst[k].max(relative_error(&a, &f));
        }
    }

    fn finish(self, out: &mut Vec<BlockError>) {
        for (block, max_relative) in self.names.iter().zip(self.worst) {
            out.push(BlockError { residual: self.residual, block, max_relative });
        }
    }
}

fn check_rotation(rng: &mut ChaCha8Rng, points: usize, out: &mut Vec<BlockError>) {
    let mut tr = Tracker::new("rotation", &["gyro_bias", "offset", "extrinsic"]);
    for _ in 0..points {
        let bias_ref = ImuBias::new(rv(rng, 0.05), Vec3::zeros());
        let pre = random_segment(rng, bias_ref, 0.0);
        let kf = |rng: &mut ChaCha8Rng, t: f64| Keyframe {
            pose: CameraPoseUpToScale { rotation: exp_so3(&rv(rng, 3.0)), position: Vec3::zeros(), timestamp: t },
            twist: CameraTwist { omega: rv(rng, 2.0), v_tilde: Vec3::zeros() },
            preint: None,
            gyro: Vec3::zeros(),
            source: 0,
        };
        let (a, b) = (kf(rng, 0.0), kf(rng, pre.dt));
        let bg = rv(rng, 0.05);
        let td = rng.random_range(-0.1..0.1);
        let r_bc = exp_so3(&rv(rng, 3.0));
        let (_, j) = rotation_residual(&pre, &a, &b, &bg, td, &r_bc);
        let eval = |c: usize, s: f64| {
            let (mut bg, mut td, mut r) = (bg, td, r_bc);
            match c {
                0..=2 => bg[c] += s,
                3 => td += s,
                _ => {
                    let mut e = Vec3::zeros();
                    e[c - 4] = s;
                    r = r * exp_so3(&e);
                }
            }
            rotation_residual(&pre, &a, &b, &bg, td, &r).0
        };
        let mut fd = DMatrix::zeros(3, 7);
        for c in 0..7 {
            fd.set_column(c, &((eval(c, STEP) - eval(c, -STEP)) / (2.0 * STEP)));
        }
        let an = DMatrix::from_column_slice(3, 7, j.as_slice());
        tr.record(&an, &fd, &[(0, 3), (3, 1), (4, 3)]);
    }
    tr.finish(out);
}

fn random_keyframe(rng: &mut ChaCha8Rng, bias_ref: &ImuBias, t: f64) -> KeyframeState {
    KeyframeState {
        rotation: exp_so3(&rv(rng, 3.0)),
        position: rv(rng, 2.0),
        velocity: rv(rng, 1.5),
        bias: ImuBias::new(bias_ref.gyro + rv(rng, 0.01), bias_ref.accel + rv(rng, 0.05)),
        timestamp: t,
        gyro: rv(rng, 1.5),
        observations: Vec::new(),
    }
}

/// Central differences of `f` through `retract` along every free direction.
fn numeric_columns<F: Fn(&FullState) -> DVector<f64>>(state: &FullState, layout: &ParameterLayout, f: F) -> DMatrix<f64> {
    let m = f(state).len();
    let mut out = DMatrix::zeros(m, layout.dim());
    let mut d = DVector::zeros(layout.dim());
    for c in 0..layout.dim() {
        d[c] = STEP;
        let plus = f(&retract(state, layout, &d).expect("layout matches state"));
        d[c] = -STEP;
        let minus = f(&retract(state, layout, &d).expect("layout matches state"));
        d[c] = 0.0;
        out.set_column(c, &((plus - minus) / (2.0 * STEP)));
    }
    out
}

fn check_reprojection(rng: &mut ChaCha8Rng, points: usize, out: &mut Vec<BlockError>) {
    let mut tr = Tracker::new("reprojection", &["pose", "motion", "extrinsic", "offset", "landmark"]);
    let intrinsics = CameraIntrinsics::default();
    let layout = ParameterLayout {
        pose: vec![Some(0)],
        motion: vec![Some(6)],
        extrinsics: Some(15),
        td: Some(21),
        landmarks: vec![Some(0)],
        camera_dim: 22,
        landmark_dim: 3,
    };
    let mut done = 0;
    while done < points {
        let bias_ref = ImuBias::new(rv(rng, 0.05), rv(rng, 0.1));
        let mut kf = random_keyframe(rng, &bias_ref, 0.0);
        let ex = Extrinsics::new(exp_so3(&rv(rng, 3.0)), rv(rng, 0.2));
        let pc = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..8.0));
        let pw = kf.rotation * (ex.r_bc * pc + ex.p_bc) + kf.position;
        kf.observations.push((0, Vec2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))));
        let state = FullState { keyframes: vec![kf], landmarks: vec![pw], extrinsics: ex, td: rng.random_range(-0.05..0.05) };
        let eval = |s: &FullState| reprojection_residual(s, 0, 0, &intrinsics, 1.0, RobustCost::None);
        let Ok(t) = eval(&state) else { continue };
        let mut an = DMatrix::zeros(2, 25);
        an.view_mut((0, 0), (2, 6)).copy_from(&t.pose);
        an.view_mut((0, 6), (2, 9)).copy_from(&t.motion);
        an.view_mut((0, 15), (2, 6)).copy_from(&t.extrinsics);
        an.view_mut((0, 21), (2, 1)).copy_from(&t.td);
        an.view_mut((0, 22), (2, 3)).copy_from(&t.landmark);
        let fd = numeric_columns(&state, &layout, |s| {
            let r = eval(s).map(|t| t.residual).unwrap_or_else(|_| Vec2::repeat(f64::NAN));
            DVector::from_column_slice(r.as_slice())
        });
        tr.record(&an, &fd, &[(0, 6), (6, 9), (15, 6), (21, 1), (22, 3)]);
        done += 1;
    }
    tr.finish(out);
}

fn check_imu(rng: &mut ChaCha8Rng, points: usize, out: &mut Vec<BlockError>) {
    let mut tr = Tracker::new("inertial", &["pose_i", "motion_i", "pose_j", "motion_j"]);
    let layout = ParameterLayout {
        pose: vec![Some(0), Some(15)],
        motion: vec![Some(6), Some(21)],
        extrinsics: None,
        td: None,
        landmarks: Vec::new(),
        camera_dim: 30,
        landmark_dim: 0,
    };
    let gravity = Vec3::new(0.0, 0.0, -9.81);
    for _ in 0..points {
        let bias_ref = ImuBias::new(rv(rng, 0.05), rv(rng, 0.1));
        let pre = random_segment(rng, bias_ref, 0.0);
        let a = random_keyframe(rng, &bias_ref, 0.0);
        let b = random_keyframe(rng, &bias_ref, pre.dt);
        let state = FullState { keyframes: vec![a, b], landmarks: Vec::new(), extrinsics: Extrinsics::default(), td: 0.0 };
        let eval = |s: &FullState| {
            imu_residual(&s.keyframes[0], &s.keyframes[1], &pre, &gravity, ImuWeighting::Full, RobustCost::None)
        };
        let t = eval(&state);
        let mut an = DMatrix::zeros(15, 30);
        an.view_mut((0, 0), (9, 6)).copy_from(&t.pose_i);
        an.view_mut((0, 6), (9, 9)).copy_from(&t.motion_i);
        an.view_mut((0, 15), (9, 6)).copy_from(&t.pose_j);
        an.view_mut((0, 21), (9, 9)).copy_from(&t.motion_j);
        let (bi, bj) = ImuTerm::bias_jacobians();
        an.view_mut((9, 6), (6, 9)).copy_from(&bi);
        an.view_mut((9, 21), (6, 9)).copy_from(&bj);
        let fd = numeric_columns(&state, &layout, |s| {
            let t = eval(s);
            let mut v = DVector::zeros(15);
            v.rows_mut(0, 9).copy_from(&t.residual);
            v.rows_mut(9, 6).copy_from(&t.bias_residual);
            v
        });
        tr.record(&an, &fd, &[(0, 6), (6, 9), (15, 6), (21, 9)]);
    }
    tr.finish(out);
}

/// Checks the rotation-alignment, reprojection and inertial Jacobians at
/// `points` random linearization points each.
pub fn jacobian_check(points: usize, seed: u64) -> JacobianReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    check_rotation(&mut rng, points, &mut blocks);
    check_reprojection(&mut rng, points, &mut blocks);
    check_imu(&mut rng, points, &mut blocks);
    JacobianReport { points, blocks }
}
