//! Three-step initialization: rotation/offset/gyro bias by nonlinear least
//! squares, then scale/gravity/translation by a linear solve, then a
//! gravity-magnitude-constrained refinement that adds accelerometer bias.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector2};

use crate::error::InitError;
use crate::imu::{nearest_sample, preintegrate_between, ImuBias, ImuNoiseSpec, ImuSample, PreintegratedImu};
use crate::lie::{
    exp_so3, hat, left_jacobian, left_jacobian_inv, right_jacobian, right_jacobian_inv, Mat3, Rotation, Vec3,
};
use crate::temporal::{camera_twist, interpolate_camera, CameraPoseUpToScale, CameraTwist, Extrinsics};

pub type Mat3x7 = SMatrix<f64, 3, 7>;

/// Minimum keyframes for the rotation step.
pub const MIN_KEYFRAMES_ROTATION: usize = 2;
/// Minimum keyframes for the linear steps (3 rows per triple, up to 9 unknowns).
pub const MIN_KEYFRAMES_LINEAR: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub pose: CameraPoseUpToScale,
    /// Forward-difference twist to the next keyframe (the last one reuses its predecessor's).
    pub twist: CameraTwist,
    /// Preintegration to the next keyframe; `None` for the last one.
    pub preint: Option<PreintegratedImu>,
    /// Raw gyro reading nearest to the keyframe stamp.
    pub gyro: Vec3,
    /// Position of the pose in the caller's input list.
    pub source: usize,
}

/// Ordered keyframes with their preintegrated IMU segments.
///
/// Camera stamps are taken as IMU times when choosing segment bounds; the
/// residual clock offset is what Step 1 estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeSet {
    keyframes: Vec<Keyframe>,
    imu: Arc<[ImuSample]>,
    noise: ImuNoiseSpec,
    bias_ref: ImuBias,
}

impl KeyframeSet {
    /// Builds a set from poses tagged with their source index. Poses whose
    /// stamps fall outside the IMU stream are skipped.
    pub fn new(
        poses: Vec<(usize, CameraPoseUpToScale)>,
        imu: Arc<[ImuSample]>,
        noise: ImuNoiseSpec,
        bias_ref: ImuBias,
    ) -> Result<Self, InitError> {
        if imu.is_empty() {
            return Err(crate::error::ImuError::EmptyStream.into());
        }
        let t0 = imu[0].timestamp;
        let t1 = imu[imu.len() - 1].timestamp + noise.period();
        let poses: Vec<_> = poses
            .into_iter()
            .filter(|(_, p)| p.timestamp >= t0 && p.timestamp <= t1)
            .collect();
        for w in poses.windows(2) {
            if !(w[1].1.timestamp > w[0].1.timestamp) {
                return Err(crate::error::TemporalError::DegenerateInterval {
                    dt: w[1].1.timestamp - w[0].1.timestamp,
                }
                .into());
            }
        }
        let mut twists = Vec::with_capacity(poses.len());
        for w in poses.windows(2) {
            twists.push(camera_twist(&w[0].1, &w[1].1)?);
        }
        if let Some(last) = twists.last().copied() {
            twists.push(last);
        } else if !poses.is_empty() {
            twists.push(CameraTwist::default());
        }
        let mut keyframes = Vec::with_capacity(poses.len());
        for (k, (source, pose)) in poses.iter().enumerate() {
            let preint = match poses.get(k + 1) {
                Some((_, next)) => {
                    Some(preintegrate_between(&imu, pose.timestamp, next.timestamp, bias_ref, &noise)?)
                }
                None => None,
            };
            keyframes.push(Keyframe {
                pose: *pose,
                twist: twists[k],
                preint,
                gyro: imu[nearest_sample(&imu, pose.timestamp)].gyro,
                source: *source,
            });
        }
        Ok(Self { keyframes, imu, noise, bias_ref })
    }

    pub fn from_poses(
        poses: &[CameraPoseUpToScale],
        imu: Arc<[ImuSample]>,
        noise: ImuNoiseSpec,
        bias_ref: ImuBias,
    ) -> Result<Self, InitError> {
        Self::new(poses.iter().copied().enumerate().collect(), imu, noise, bias_ref)
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn bias_ref(&self) -> ImuBias {
        self.bias_ref
    }

    pub fn noise(&self) -> &ImuNoiseSpec {
        &self.noise
    }

    pub fn imu(&self) -> &Arc<[ImuSample]> {
        &self.imu
    }

    fn tagged_poses(&self) -> Vec<(usize, CameraPoseUpToScale)> {
        self.keyframes.iter().map(|k| (k.source, k.pose)).collect()
    }

    /// Same keyframes re-preintegrated about a new reference bias.
    pub fn rebiased(&self, bias_ref: ImuBias) -> Result<Self, InitError> {
        Self::new(self.tagged_poses(), self.imu.clone(), self.noise, bias_ref)
    }

    /// Bias-corrected gyro reading at keyframe `i`.
    pub fn corrected_gyro(&self, i: usize, gyro_bias: &Vec3) -> Vec3 {
        self.keyframes[i].gyro - gyro_bias
    }
}

/// Removes an estimated clock offset from every camera stamp (`t <- t - td`)
/// and rebuilds twists and preintegration windows. Keyframes pushed outside
/// the IMU stream are dropped.
pub fn compensate_time_offset(kfs: &KeyframeSet, td: f64) -> Result<KeyframeSet, InitError> {
    if td == 0.0 {
        return Ok(kfs.clone());
    }
    let poses = kfs
        .keyframes
        .iter()
        .map(|k| {
            let mut p = k.pose;
            p.timestamp -= td;
            (k.source, p)
        })
        .collect();
    KeyframeSet::new(poses, kfs.imu.clone(), kfs.noise, kfs.bias_ref)
}

// ---------------------------------------------------------------- Step 1

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationWeighting {
    /// Rotation block of the preintegration information.
    Preintegration,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step1Config {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub relative_tolerance: f64,
    /// Re-preintegration rounds after folding the bias estimate in.
    pub bias_rounds: usize,
    pub weighting: RotationWeighting,
}

impl Default for Step1Config {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_lambda: 1e-4,
            relative_tolerance: 1e-12,
            bias_rounds: 4,
            weighting: RotationWeighting::Preintegration,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step1Result {
    /// Gyro bias change relative to the input set's reference bias.
    pub delta_bg: Vec3,
    /// Absolute gyro bias estimate.
    pub gyro_bias: Vec3,
    /// Residual offset of the input set's stamps.
    pub td: f64,
    pub r_bc: Rotation,
    pub final_cost: f64,
    pub iterations: usize,
    /// Per bias round, the cost after every accepted step starting with the
    /// initial one. Rounds re-preintegrate, so costs are comparable only within a round.
    pub cost_trace: Vec<Vec<f64>>,
}

/// Rotation mismatch between a preintegrated segment and the interpolated
/// camera rotations, with its derivatives with respect to
/// `(delta_bg, td, delta_phi_bc)` in that column order.
pub fn rotation_residual(
    pre: &PreintegratedImu,
    a: &Keyframe,
    b: &Keyframe,
    delta_bg: &Vec3,
    td: f64,
    r_bc: &Rotation,
) -> (Vec3, Mat3x7) {
    let r_cb = r_bc.transpose();
    let jg = pre.jg_dr;
    let r1 = pre.d_r * exp_so3(&(jg * delta_bg));
    let (wi, wj) = (a.twist.omega, b.twist.omega);
    let r2 = exp_so3(&(-wi * td)) * (a.pose.rotation.transpose() * b.pose.rotation) * exp_so3(&(wj * td));
    let m = r1.transpose() * *r_bc * r2 * r_cb;
    let e = m.log();
    let jr_inv = right_jacobian_inv(&e);

    let phi2 = r2.log();
    let rphi2 = *r_bc * phi2;
    let d_phi = -jr_inv * right_jacobian(&rphi2) * r_bc.matrix() * hat(&phi2);

    let d_bg = -left_jacobian_inv(&e) * left_jacobian(&(-jg * delta_bg)) * jg;

    let r1pp = *(r1.transpose() * *r_bc).matrix();
    let d = -m.matrix().transpose() * r1pp * left_jacobian(&(-wi * td)) * wi;
    let ee = r_bc.matrix() * right_jacobian(&(wj * td)) * wj;
    let d_td = jr_inv * (d + ee);

    let mut j = Mat3x7::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_bg);
    j.fixed_view_mut::<3, 1>(0, 3).copy_from(&d_td);
    j.fixed_view_mut::<3, 3>(0, 4).copy_from(&d_phi);
    (e, j)
}

fn rotation_weight(pre: &PreintegratedImu, mode: RotationWeighting) -> Mat3 {
    match mode {
        RotationWeighting::Identity => Mat3::identity(),
        RotationWeighting::Preintegration => pre.rotation_information(),
    }
}

fn step1_cost(kfs: &KeyframeSet, bg: &Vec3, td: f64, r_bc: &Rotation, mode: RotationWeighting) -> f64 {
    let k = &kfs.keyframes;
    (0..k.len() - 1)
        .map(|i| {
            let pre = k[i].preint.as_ref().expect("segment");
            let (e, _) = rotation_residual(pre, &k[i], &k[i + 1], bg, td, r_bc);
            (e.transpose() * rotation_weight(pre, mode) * e)[0]
        })
        .sum()
}

/// Hand-eye rotation seed from matched rotation increments, ignoring bias
/// and offset.
pub fn hand_eye_seed(kfs: &KeyframeSet) -> Rotation {
    let k = &kfs.keyframes;
    let mut h = Mat3::zeros();
    for i in 0..k.len().saturating_sub(1) {
        let pre = k[i].preint.as_ref().expect("segment");
        let a = pre.d_r.log();
        let b = (k[i].pose.rotation.transpose() * k[i + 1].pose.rotation).log();
        h += b * a.transpose();
    }
    let svd = h.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Rotation::identity();
    };
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sv[1] <= 1e-9 * sv[0].max(1e-300) {
        return Rotation::identity();
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Rotation::project(&r)
}

/// Estimates gyro bias, clock offset and extrinsic rotation by
/// Levenberg-Marquardt on the rotation mismatch of all segments, re-preintegrating
/// with the folded-in bias between rounds.
pub fn step1_rotation_offset_gyrobias(
    kfs: &KeyframeSet,
    cfg: &Step1Config,
    init: Option<&Step1Result>,
) -> Result<Step1Result, InitError> {
    if kfs.len() < MIN_KEYFRAMES_ROTATION {
        return Err(InitError::InsufficientKeyframes { required: MIN_KEYFRAMES_ROTATION, available: kfs.len() });
    }
    let base = kfs.bias_ref;
    let (mut r_bc, mut td, mut bias_gyro) = match init {
        Some(s) => (s.r_bc, s.td, s.gyro_bias),
        None => (hand_eye_seed(kfs), 0.0, base.gyro),
    };
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut cost = f64::INFINITY;
    let mut set = kfs.clone();
    for round in 0..cfg.bias_rounds.max(1) {
        if round > 0 || bias_gyro != base.gyro {
            set = kfs.rebiased(ImuBias::new(bias_gyro, base.accel))?;
        }
        let mut bg = Vec3::zeros();
        let mut round_trace = Vec::new();
        let out = lm_rotation(&set, cfg, &mut bg, &mut td, &mut r_bc, &mut round_trace)?;
        trace.push(round_trace);
        iterations += out.0;
        cost = out.1;
        bias_gyro += bg;
        if bg.norm() < 1e-10 {
            break;
        }
    }
    Ok(Step1Result {
        delta_bg: bias_gyro - base.gyro,
        gyro_bias: bias_gyro,
        td,
        r_bc,
        final_cost: cost,
        iterations,
        cost_trace: trace,
    })
}

fn lm_rotation(
    kfs: &KeyframeSet,
    cfg: &Step1Config,
    bg: &mut Vec3,
    td: &mut f64,
    r_bc: &mut Rotation,
    trace: &mut Vec<f64>,
) -> Result<(usize, f64), InitError> {
    let k = &kfs.keyframes;
    let mode = cfg.weighting;
    let mut lambda = cfg.initial_lambda;
    let mut cost = step1_cost(kfs, bg, *td, r_bc, mode);
    trace.push(cost);
    let mut last_relative = f64::INFINITY;
    for it in 0..cfg.max_iterations {
        let mut h = SMatrix::<f64, 7, 7>::zeros();
        let mut g = SVector::<f64, 7>::zeros();
        for i in 0..k.len() - 1 {
            let pre = k[i].preint.as_ref().expect("segment");
            let (e, j) = rotation_residual(pre, &k[i], &k[i + 1], bg, *td, r_bc);
            let w = rotation_weight(pre, mode);
            let jtw = j.transpose() * w;
            h += jtw * j;
            g += jtw * e;
        }
        if g.amax() < 1e-300 || cost < 1e-30 {
            return Ok((it, cost));
        }
        let diag_floor = 1e-12 * h.diagonal().amax().max(1e-300);
        loop {
            let mut a = h;
            for d in 0..7 {
                a[(d, d)] += lambda * h[(d, d)].max(diag_floor);
            }
            let step = a.cholesky().map(|c| c.solve(&(-g)));
            let Some(step) = step else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Ok((it, cost));
                }
                continue;
            };
            let nbg = *bg + step.fixed_rows::<3>(0);
            let ntd = *td + step[3];
            let nr = *r_bc * exp_so3(&step.fixed_rows::<3>(4).into_owned());
            let ncost = step1_cost(kfs, &nbg, ntd, &nr, mode);
            if ncost.is_finite() && ncost < cost {
                let rel = (cost - ncost) / cost.max(1e-300);
                *bg = nbg;
                *td = ntd;
                *r_bc = nr;
                cost = ncost;
                trace.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                if rel < cfg.relative_tolerance {
                    return Ok((it + 1, cost));
                }
                last_relative = rel;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left: at a minimum to working precision
                return Ok((it + 1, cost));
            }
        }
    }
    if last_relative > 1e-6 {
        return Err(InitError::NotConverged { iterations: cfg.max_iterations });
    }
    Ok((cfg.max_iterations, cost))
}

// ---------------------------------------------------------------- Steps 2-3

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConfig {
    /// Reweight triples with Huber weights on their residual norms.
    pub robust: bool,
    pub reweight_passes: usize,
    /// Huber constant in units of the robust residual scale.
    pub huber_k: f64,
    /// Smallest acceptable `sigma_min / sigma_max` after column equilibration.
    pub rank_tolerance: f64,
    /// Relinearizations of the gravity direction in the refinement.
    pub gravity_passes: usize,
    pub gravity_magnitude: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            robust: true,
            reweight_passes: 2,
            huber_k: 1.345,
            rank_tolerance: 1e-8,
            gravity_passes: 2,
            gravity_magnitude: crate::imu::GRAVITY_MAGNITUDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step2Result {
    pub scale: f64,
    pub gravity: Vec3,
    pub p_cb: Vec3,
    pub singular_values: Vec<f64>,
    pub conditioning: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step3Result {
    pub scale: f64,
    pub gravity: Vec3,
    pub accel_bias: Vec3,
    pub p_cb: Vec3,
    pub delta_theta_xy: Vector2<f64>,
    pub conditioning: f64,
}

struct LinearSolution {
    x: DVector<f64>,
    singular_values: Vec<f64>,
    conditioning: f64,
}

/// Least squares with column equilibration and optional per-block Huber
/// reweighting. Rows come in blocks of three (one per keyframe triple).
fn solve_blocks(a: &DMatrix<f64>, c: &DVector<f64>, cfg: &LinearConfig) -> Result<LinearSolution, InitError> {
    let n = a.ncols();
    let mut scales = DVector::from_element(n, 1.0);
    for j in 0..n {
        let norm = a.column(j).norm();
        if norm > 0.0 {
            scales[j] = 1.0 / norm;
        }
    }
    let blocks = a.nrows() / 3;
    let mut weights = vec![1.0f64; blocks];
    let passes = if cfg.robust { cfg.reweight_passes + 1 } else { 1 };
    let mut out = None;
    for pass in 0..passes {
        let mut aw = a.clone();
        let mut cw = c.clone();
        for (b, w) in weights.iter().enumerate() {
            let sw = w.sqrt();
            for r in 3 * b..3 * b + 3 {
                aw.row_mut(r).scale_mut(sw);
                cw[r] *= sw;
            }
        }
        for j in 0..n {
            aw.column_mut(j).scale_mut(scales[j]);
        }
        let svd = aw.svd(true, true);
        let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let conditioning = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(conditioning >= cfg.rank_tolerance) {
            return Err(InitError::RankDeficient { conditioning });
        }
        let y = svd.solve(&cw, 0.0).map_err(|_| InitError::RankDeficient { conditioning })?;
        let x = y.component_mul(&scales);
        if pass + 1 < passes {
            let resid = a * &x - c;
            let norms: Vec<f64> = (0..blocks).map(|b| resid.rows(3 * b, 3).norm()).collect();
            let mut sorted = norms.clone();
            sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let scale = 1.4826 * sorted[sorted.len() / 2];
            let k = cfg.huber_k * scale;
            for (w, r) in weights.iter_mut().zip(&norms) {
                *w = if k > 0.0 && *r > k { k / r } else { 1.0 };
            }
        }
        out = Some(LinearSolution { x, singular_values: sv, conditioning });
    }
    Ok(out.expect("at least one pass"))
}

/// Camera rotation and position of keyframe `i` interpolated by `td`.
fn shifted_pose(k: &Keyframe, td: f64) -> (Mat3, Vec3) {
    let p = interpolate_camera(&k.pose, &k.twist, td);
    (*p.rotation.matrix(), p.position)
}

struct Triple {
    lambda: Vec3,
    beta: f64,
    varphi: Mat3,
    gamma: Vec3,
    zeta: Mat3,
}

fn triples(kfs: &KeyframeSet, s1: &Step1Result) -> Vec<Triple> {
    let k = &kfs.keyframes;
    let r_cb = *s1.r_bc.transpose().matrix();
    let dbg = s1.gyro_bias - kfs.bias_ref.gyro;
    let mut out = Vec::with_capacity(k.len().saturating_sub(2));
    for i in 0..k.len().saturating_sub(2) {
        let (r1, p1) = shifted_pose(&k[i], s1.td);
        let (r2, p2) = shifted_pose(&k[i + 1], s1.td);
        let (r3, p3) = shifted_pose(&k[i + 2], s1.td);
        let pre12 = k[i].preint.as_ref().expect("segment");
        let pre23 = k[i + 1].preint.as_ref().expect("segment");
        let (dt12, dt23) = (pre12.dt, pre23.dt);
        let (_, dv12, dp12) = pre12.bias_corrected_terms(&dbg, &Vec3::zeros());
        let (_, _, dp23) = pre23.bias_corrected_terms(&dbg, &Vec3::zeros());
        out.push(Triple {
            lambda: (p2 - p1) * dt23 - (p3 - p2) * dt12,
            beta: 0.5 * (dt12 * dt23 * dt23 + dt12 * dt12 * dt23),
            varphi: (r2 - r3) * dt12 - (r1 - r2) * dt23,
            gamma: r1 * r_cb * (dp12 * dt23 - dv12 * dt12 * dt23) - r2 * r_cb * dp23 * dt12,
            zeta: r1 * r_cb * (pre12.ja_dv * dt12 * dt23 - pre12.ja_dp * dt23) + r2 * r_cb * pre23.ja_dp * dt12,
        });
    }
    out
}

/// Scale, gravity and body-in-camera translation with the accelerometer
/// bias ignored.
pub fn step2_scale_gravity_translation(
    kfs: &KeyframeSet,
    s1: &Step1Result,
    cfg: &LinearConfig,
) -> Result<Step2Result, InitError> {
    if kfs.len() < MIN_KEYFRAMES_LINEAR {
        return Err(InitError::InsufficientKeyframes { required: MIN_KEYFRAMES_LINEAR, available: kfs.len() });
    }
    let tr = triples(kfs, s1);
    let mut a = DMatrix::zeros(3 * tr.len(), 7);
    let mut c = DVector::zeros(3 * tr.len());
    for (b, t) in tr.iter().enumerate() {
        let r = 3 * b;
        a.view_mut((r, 0), (3, 1)).copy_from(&t.lambda);
        a.view_mut((r, 1), (3, 3)).copy_from(&(Mat3::identity() * t.beta));
        a.view_mut((r, 4), (3, 3)).copy_from(&t.varphi);
        c.rows_mut(r, 3).copy_from(&t.gamma);
    }
    let sol = solve_blocks(&a, &c, cfg)?;
    let x = sol.x;
    Ok(Step2Result {
        scale: x[0],
        gravity: Vec3::new(x[1], x[2], x[3]),
        p_cb: Vec3::new(x[4], x[5], x[6]),
        singular_values: sol.singular_values,
        conditioning: sol.conditioning,
    })
}

/// Rotation taking the reference gravity direction `[0,0,-1]` onto `g`.
pub fn gravity_alignment(g: &Vec3) -> Result<Rotation, InitError> {
    let n = g.norm();
    if !(n > 1e-6) {
        return Err(InitError::GravityDegenerate);
    }
    let gw = g / n;
    let ge = Vec3::new(0.0, 0.0, -1.0);
    let axis = ge.cross(&gw);
    let s = axis.norm();
    let c = ge.dot(&gw);
    if s < 1e-12 {
        // parallel: identity; anti-parallel: any half turn about a horizontal axis
        return Ok(if c > 0.0 { Rotation::identity() } else { exp_so3(&Vec3::new(std::f64::consts::PI, 0.0, 0.0)) });
    }
    Ok(exp_so3(&(axis / s * s.atan2(c))))
}

/// Refines scale, gravity direction and translation under the known gravity
/// magnitude and estimates the accelerometer bias.
pub fn step3_refine(
    kfs: &KeyframeSet,
    s1: &Step1Result,
    s2: &Step2Result,
    cfg: &LinearConfig,
) -> Result<Step3Result, InitError> {
    if kfs.len() < MIN_KEYFRAMES_LINEAR {
        return Err(InitError::InsufficientKeyframes { required: MIN_KEYFRAMES_LINEAR, available: kfs.len() });
    }
    let tr = triples(kfs, s1);
    let g_e = Vec3::new(0.0, 0.0, -cfg.gravity_magnitude);
    let mut r_we = gravity_alignment(&s2.gravity)?;
    let mut result = None;
    for _ in 0..cfg.gravity_passes.max(1) {
        let rg = *r_we.matrix() * g_e;
        let rgh = r_we.matrix() * hat(&g_e);
        let mut a = DMatrix::zeros(3 * tr.len(), 9);
        let mut c = DVector::zeros(3 * tr.len());
        for (b, t) in tr.iter().enumerate() {
            let r = 3 * b;
            let phi = -rgh * t.beta;
            a.view_mut((r, 0), (3, 1)).copy_from(&t.lambda);
            a.view_mut((r, 1), (3, 2)).copy_from(&phi.fixed_columns::<2>(0));
            a.view_mut((r, 3), (3, 3)).copy_from(&t.zeta);
            a.view_mut((r, 6), (3, 3)).copy_from(&t.varphi);
            c.rows_mut(r, 3).copy_from(&(t.gamma - rg * t.beta));
        }
        let sol = solve_blocks(&a, &c, cfg)?;
        let x = sol.x;
        let dtheta = Vec3::new(x[1], x[2], 0.0);
        r_we = r_we * exp_so3(&dtheta);
        result = Some(Step3Result {
            scale: x[0],
            gravity: *r_we.matrix() * g_e,
            accel_bias: kfs.bias_ref.accel + Vec3::new(x[3], x[4], x[5]),
            p_cb: Vec3::new(x[6], x[7], x[8]),
            delta_theta_xy: Vector2::new(x[1], x[2]),
            conditioning: sol.conditioning,
        });
    }
    Ok(result.expect("at least one pass"))
}

/// Metric body velocity at every keyframe from consecutive positions.
pub fn estimate_velocities(kfs: &KeyframeSet, s3: &Step3Result, s1: &Step1Result) -> Vec<Vec3> {
    let k = &kfs.keyframes;
    let r_cb = *s1.r_bc.transpose().matrix();
    let dbg = s1.gyro_bias - kfs.bias_ref.gyro;
    let dba = s3.accel_bias - kfs.bias_ref.accel;
    let g = s3.gravity;
    let s = s3.scale;
    let mut v = Vec::with_capacity(k.len());
    for i in 0..k.len().saturating_sub(1) {
        let (r1, p1) = shifted_pose(&k[i], s1.td);
        let (r2, p2) = shifted_pose(&k[i + 1], s1.td);
        let pre = k[i].preint.as_ref().expect("segment");
        let (_, _, dp) = pre.bias_corrected_terms(&dbg, &dba);
        let dt = pre.dt;
        v.push((s * (p2 - p1) - 0.5 * g * dt * dt - r1 * r_cb * dp - (r1 - r2) * s3.p_cb) / dt);
    }
    if k.len() >= 2 {
        let i = k.len() - 2;
        let (r1, _) = shifted_pose(&k[i], s1.td);
        let pre = k[i].preint.as_ref().expect("segment");
        let (_, dv, _) = pre.bias_corrected_terms(&dbg, &dba);
        let last = v[i] + g * pre.dt + r1 * r_cb * dv;
        v.push(last);
    } else if k.len() == 1 {
        v.push(Vec3::zeros());
    }
    v
}

// ---------------------------------------------------------------- orchestration

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCriteria {
    pub window: usize,
    /// Degrees, per yaw/pitch/roll component.
    pub rotation_deg: f64,
    pub translation_m: f64,
    pub offset_s: f64,
    /// Relative standard deviation of the scale.
    pub scale_rel: f64,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        Self { window: 10, rotation_deg: 0.2, translation_m: 0.005, offset_s: 0.0005, scale_rel: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitPolicy {
    pub min_keyframes: usize,
    /// Use every n-th camera frame as a keyframe.
    pub keyframe_stride: usize,
    pub step1: Step1Config,
    pub linear: LinearConfig,
    pub convergence: ConvergenceCriteria,
    /// Fail with `NeverConverged` instead of returning an unconverged result.
    pub strict: bool,
    /// Offset-compensation rounds in batch mode.
    pub batch_rounds: usize,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self {
            min_keyframes: 10,
            keyframe_stride: 4,
            step1: Step1Config::default(),
            linear: LinearConfig::default(),
            convergence: ConvergenceCriteria::default(),
            strict: false,
            batch_rounds: 5,
        }
    }
}

/// Diagnostics of one execution of the three-step process.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionRecord {
    pub keyframes: usize,
    /// Stamp of the newest keyframe (camera clock).
    pub stamp: f64,
    pub relaunched: bool,
    pub offset_increment: f64,
    pub offset_total: f64,
    pub r_bc: Rotation,
    pub p_bc: Option<Vec3>,
    pub scale: Option<f64>,
    pub step1_cost: f64,
    pub step1_iterations: usize,
    pub wall_time: Duration,
    pub error: Option<InitError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitializationResult {
    pub step1: Step1Result,
    pub step3: Step3Result,
    /// Clock offset removed from the camera stamps in total.
    pub time_offset: f64,
    pub extrinsics: Extrinsics,
    pub velocities: Vec<Vec3>,
    pub converged: bool,
    pub relaunch_count: usize,
    /// Camera stamp of the keyframe at which convergence was declared.
    pub converged_at: Option<f64>,
    /// Final keyframes, stamps compensated and preintegrated at the estimated gyro bias.
    pub keyframes: KeyframeSet,
    pub history: Vec<ExecutionRecord>,
}

impl InitializationResult {
    pub fn bias(&self) -> ImuBias {
        ImuBias::new(self.step1.gyro_bias, self.step3.accel_bias)
    }
}

struct FullEstimate {
    s1: Step1Result,
    s3: Step3Result,
    kfs: KeyframeSet,
}

/// Steps 2 and 3 on a set re-preintegrated at the Step-1 bias.
fn linear_steps(kfs: &KeyframeSet, s1: &Step1Result, cfg: &LinearConfig) -> Result<FullEstimate, InitError> {
    let rebiased = kfs.rebiased(ImuBias::new(s1.gyro_bias, kfs.bias_ref.accel))?;
    let s2 = step2_scale_gravity_translation(&rebiased, s1, cfg)?;
    let s3 = step3_refine(&rebiased, s1, &s2, cfg)?;
    Ok(FullEstimate { s1: s1.clone(), s3, kfs: rebiased })
}

fn extrinsics_of(s1: &Step1Result, s3: &Step3Result) -> Extrinsics {
    Extrinsics::from_p_cb(s1.r_bc, s3.p_cb)
}

/// One-shot initialization over a fixed keyframe set: repeats Step 1 with
/// offset compensation until the residual offset is negligible, then runs
/// the linear steps and recovers velocities.
pub fn initialize_batch(kfs: &KeyframeSet, policy: &InitPolicy) -> Result<InitializationResult, InitError> {
    let mut set = kfs.clone();
    let mut total = 0.0;
    let mut prev: Option<Step1Result> = None;
    let mut history = Vec::new();
    let period = kfs.noise.period();
    let mut s1 = None;
    for _ in 0..policy.batch_rounds.max(1) {
        let start = Instant::now();
        let mut r = step1_rotation_offset_gyrobias(&set, &policy.step1, prev.as_ref())?;
        let inc = r.td;
        total += inc;
        history.push(ExecutionRecord {
            keyframes: set.len(),
            stamp: set.keyframes.last().map(|k| k.pose.timestamp).unwrap_or(0.0),
            relaunched: inc.abs() > period,
            offset_increment: inc,
            offset_total: total,
            r_bc: r.r_bc,
            p_bc: None,
            scale: None,
            step1_cost: r.final_cost,
            step1_iterations: r.iterations,
            wall_time: start.elapsed(),
            error: None,
        });
        set = compensate_time_offset(&set, inc)?;
        r.td = 0.0;
        let done = inc.abs() < 1e-6;
        s1 = Some(r.clone());
        prev = Some(r);
        if done {
            break;
        }
    }
    let mut s1 = s1.expect("at least one round");
    // the set is now expressed in compensated stamps
    let est = linear_steps(&set, &s1, &policy.linear)?;
    s1.td = 0.0;
    let velocities = estimate_velocities(&est.kfs, &est.s3, &est.s1);
    if let Some(h) = history.last_mut() {
        h.p_bc = Some(extrinsics_of(&s1, &est.s3).p_bc);
        h.scale = Some(est.s3.scale);
    }
    Ok(InitializationResult {
        extrinsics: extrinsics_of(&s1, &est.s3),
        step1: s1,
        step3: est.s3,
        time_offset: total,
        velocities,
        converged: true,
        relaunch_count: 0,
        converged_at: None,
        keyframes: est.kfs,
        history,
    })
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    ypr_deg: Vec3,
    p_bc: Vec3,
    td: f64,
    scale: f64,
}

fn window_converged(hist: &[Sample], c: &ConvergenceCriteria) -> bool {
    if c.window < 2 || hist.len() < c.window {
        return false;
    }
    let w = &hist[hist.len() - c.window..];
    let n = w.len() as f64;
    let std = |f: &dyn Fn(&Sample) -> f64| {
        let m = w.iter().map(f).sum::<f64>() / n;
        (w.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let mean_scale = w.iter().map(|s| s.scale).sum::<f64>() / n;
    (0..3).all(|a| std(&|s: &Sample| s.ypr_deg[a]) < c.rotation_deg)
        && (0..3).all(|a| std(&|s: &Sample| s.p_bc[a]) < c.translation_m)
        && std(&|s: &Sample| s.td) < c.offset_s
        && std(&|s: &Sample| s.scale) < c.scale_rel * mean_scale.abs()
}

/// Unwraps yaw/pitch/roll in degrees against a reference so that window
/// statistics do not see the +-180 seam.
fn unwrap_deg(ypr: Vec3, reference: Option<Vec3>) -> Vec3 {
    match reference {
        None => ypr,
        Some(r) => ypr.zip_map(&r, |a, b| b + crate::lie::wrap_angle((a - b).to_radians()).to_degrees()),
    }
}

/// Online initialization over a stream of camera poses: runs the three-step
/// process each time a keyframe arrives, relaunching with compensated stamps
/// whenever the offset increment exceeds one IMU period, and stops once the
/// sliding-window convergence test passes.
pub fn run_initialization(
    poses: &[CameraPoseUpToScale],
    imu: Arc<[ImuSample]>,
    noise: ImuNoiseSpec,
    policy: &InitPolicy,
) -> Result<InitializationResult, InitError> {
    let min_kf = policy.min_keyframes.max(MIN_KEYFRAMES_LINEAR);
    let period = noise.period();
    let stride = policy.keyframe_stride.max(1);
    let mut compensation = 0.0;
    let mut active: Vec<(usize, CameraPoseUpToScale)> = Vec::new();
    let mut relaunches = 0;
    let mut executions = 0;
    let mut history = Vec::new();
    let mut samples: Vec<Sample> = Vec::new();
    let mut prev: Option<Step1Result> = None;
    let mut best: Option<(FullEstimate, f64)> = None;

    for (idx, pose) in poses.iter().enumerate().step_by(stride) {
        let mut p = *pose;
        p.timestamp -= compensation;
        active.push((idx, p));
        if active.len() < min_kf {
            continue;
        }
        executions += 1;
        let start = Instant::now();
        let kfs = match KeyframeSet::new(active.clone(), imu.clone(), noise, ImuBias::zero()) {
            Ok(k) if k.len() >= min_kf => k,
            Ok(_) => continue,
            Err(e) => return Err(e),
        };
        let init = prev.clone().map(|mut s| {
            s.td = 0.0;
            s
        });
        let s1 = match step1_rotation_offset_gyrobias(&kfs, &policy.step1, init.as_ref()) {
            Ok(s) => s,
            Err(e) => {
                history.push(failed_record(&kfs, compensation, start, e));
                continue;
            }
        };
        let inc = s1.td;
        let mut rec = ExecutionRecord {
            keyframes: kfs.len(),
            stamp: p.timestamp,
            relaunched: false,
            offset_increment: inc,
            offset_total: compensation + inc,
            r_bc: s1.r_bc,
            p_bc: None,
            scale: None,
            step1_cost: s1.final_cost,
            step1_iterations: s1.iterations,
            wall_time: Duration::ZERO,
            error: None,
        };
        if inc.abs() > period {
            compensation += inc;
            active.clear();
            samples.clear();
            relaunches += 1;
            prev = Some(s1);
            rec.relaunched = true;
            rec.wall_time = start.elapsed();
            history.push(rec);
            continue;
        }
        match linear_steps(&kfs, &s1, &policy.linear) {
            Ok(est) => {
                let ex = extrinsics_of(&est.s1, &est.s3);
                rec.p_bc = Some(ex.p_bc);
                rec.scale = Some(est.s3.scale);
                let ypr = ex.r_bc.to_euler_ypr().map(f64::to_degrees);
                let reference = samples.last().map(|s| s.ypr_deg);
                samples.push(Sample {
                    ypr_deg: unwrap_deg(ypr, reference),
                    p_bc: ex.p_bc,
                    td: compensation + inc,
                    scale: est.s3.scale,
                });
                best = Some((est, compensation + inc));
            }
            Err(e) => rec.error = Some(e),
        }
        prev = Some(s1);
        compensation += inc;
        for (_, q) in active.iter_mut() {
            q.timestamp -= inc;
        }
        rec.wall_time = start.elapsed();
        history.push(rec);
        if best.is_some() && window_converged(&samples, &policy.convergence) {
            let (est, total) = best.take().expect("estimate");
            return Ok(finish(est, total, true, relaunches, Some(p.timestamp + compensation), history));
        }
    }
    match best {
        Some((est, total)) if !policy.strict => Ok(finish(est, total, false, relaunches, None, history)),
        _ => Err(InitError::NeverConverged { executions, relaunches }),
    }
}

fn failed_record(kfs: &KeyframeSet, total: f64, start: Instant, e: InitError) -> ExecutionRecord {
    ExecutionRecord {
        keyframes: kfs.len(),
        stamp: kfs.keyframes.last().map(|k| k.pose.timestamp).unwrap_or(0.0),
        relaunched: false,
        offset_increment: 0.0,
        offset_total: total,
        r_bc: Rotation::identity(),
        p_bc: None,
        scale: None,
        step1_cost: f64::NAN,
        step1_iterations: 0,
        wall_time: start.elapsed(),
        error: Some(e),
    }
}

fn finish(
    est: FullEstimate,
    total: f64,
    converged: bool,
    relaunch_count: usize,
    converged_at: Option<f64>,
    history: Vec<ExecutionRecord>,
) -> InitializationResult {
    let velocities = estimate_velocities(&est.kfs, &est.s3, &est.s1);
    InitializationResult {
        extrinsics: extrinsics_of(&est.s1, &est.s3),
        step1: est.s1,
        step3: est.s3,
        time_offset: total,
        velocities,
        converged,
        relaunch_count,
        converged_at,
        keyframes: est.kfs,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{synthesize, RigConfig, TrajectoryConfig};
    use std::f64::consts::PI;

    fn set_from(d: &crate::sim::SyntheticDataset) -> KeyframeSet {
        KeyframeSet::from_poses(&d.camera_poses(), d.imu.clone().into(), d.noise, ImuBias::zero()).unwrap()
    }

    fn short() -> TrajectoryConfig {
        TrajectoryConfig { duration: 4.0, ..TrajectoryConfig::default() }
    }

    #[test]
    fn insufficient_keyframes() {
        let d = synthesize(&short(), &RigConfig::noise_free(), 1).unwrap();
        let one = KeyframeSet::from_poses(&d.camera_poses()[..1], d.imu.clone().into(), d.noise, ImuBias::zero())
            .unwrap();
        assert_eq!(
            step1_rotation_offset_gyrobias(&one, &Step1Config::default(), None),
            Err(InitError::InsufficientKeyframes { required: 2, available: 1 })
        );
    }

    #[test]
    fn identity_rig_recovers_zeros() {
        let rig = RigConfig {
            extrinsics: Extrinsics::new(Rotation::identity(), Vec3::new(0.1, 0.04, 0.03)),
            ..RigConfig::noise_free()
        };
        let d = synthesize(&short(), &rig, 1).unwrap();
        let kfs = set_from(&d);
        let s1 = step1_rotation_offset_gyrobias(&kfs, &Step1Config::default(), None).unwrap();
        assert!(s1.r_bc.angle_to(&Rotation::identity()) < 1e-9);
        assert!(s1.td.abs() < 1e-9);
        assert!(s1.gyro_bias.norm() < 1e-9);
        let mut raw = 0.0;
        let k = kfs.keyframes();
        for i in 0..k.len() - 1 {
            let (e, _) = rotation_residual(k[i].preint.as_ref().unwrap(), &k[i], &k[i + 1], &s1.delta_bg, s1.td, &s1.r_bc);
            raw += e.norm_squared();
        }
        assert!(raw < 1e-18, "cost {raw}");
    }

    #[test]
    fn step1_recovers_offset_rotation_and_bias() {
        let rig = RigConfig {
            time_offset: 0.05,
            bias: ImuBias::new(Vec3::new(-0.0023, 0.0249, 0.0817), Vec3::zeros()),
            ..RigConfig::noise_free()
        };
        let d = synthesize(&short(), &rig, 2).unwrap();
        let res = initialize_batch(&set_from(&d), &InitPolicy::default()).unwrap();
        let truth = d.truth.extrinsics.r_bc;
        assert!(res.step1.r_bc.angle_to(&truth).to_degrees() < 0.01);
        assert!((res.time_offset - 0.05).abs() < 1e-4, "td {}", res.time_offset);
        assert!((res.step1.gyro_bias - rig.bias.gyro).norm() < 1e-5);
        for w in res.history.windows(2) {
            assert!(w[1].offset_increment.abs() <= w[0].offset_increment.abs() + 1e-9);
        }
    }

    #[test]
    fn rotation_jacobians_match_differences() {
        let rig = RigConfig { time_offset: 0.03, ..RigConfig::default() };
        let d = synthesize(&short(), &rig, 3).unwrap();
        let kfs = set_from(&d);
        let k = kfs.keyframes();
        let bg = Vec3::new(0.01, -0.02, 0.03);
        let r_bc = Rotation::from_euler_ypr(0.1, -0.2, 3.0);
        let td = 0.021;
        let h = 1e-6;
        for i in [0, 7, 30] {
            let pre = k[i].preint.as_ref().unwrap();
            let (_, j) = rotation_residual(pre, &k[i], &k[i + 1], &bg, td, &r_bc);
            for c in 0..7 {
                let eval = |s: f64| {
                    let mut b = bg;
                    let mut t = td;
                    let mut r = r_bc;
                    match c {
                        0..=2 => b[c] += s,
                        3 => t += s,
                        _ => {
                            let mut e = Vec3::zeros();
                            e[c - 4] = s;
                            r = r * exp_so3(&e);
                        }
                    }
                    rotation_residual(pre, &k[i], &k[i + 1], &b, t, &r).0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = j.column(c);
                let rel = (fd - an).norm() / fd.norm().max(1e-9);
                assert!(rel < 1e-5, "segment {i} column {c}: {rel}");
            }
        }
    }

    #[test]
    fn linear_steps_on_noise_free_data() {
        let d = crate::sim::to_up_to_scale(&synthesize(&short(), &RigConfig::noise_free(), 4).unwrap(), 2.0);
        let res = initialize_batch(&set_from(&d), &InitPolicy::default()).unwrap();
        assert!((res.step3.scale - 2.0).abs() / 2.0 < 1e-4, "scale {}", res.step3.scale);
        assert!((res.extrinsics.p_bc - d.truth.extrinsics.p_bc).norm() < 1e-4);
        assert!((res.step3.gravity.norm() - 9.81).abs() < 1e-9);
        assert!(res.step3.gravity.angle(&d.truth.gravity).to_degrees() < 0.01);
        assert!(res.step3.accel_bias.norm() < 1e-4);
    }

    #[test]
    fn scale_homogeneity_in_step2() {
        let d = synthesize(&short(), &RigConfig::noise_free(), 5).unwrap();
        let policy = InitPolicy { linear: LinearConfig { robust: false, ..LinearConfig::default() }, ..InitPolicy::default() };
        let kfs = set_from(&d);
        let s1 = step1_rotation_offset_gyrobias(&kfs, &policy.step1, None).unwrap();
        let a = step2_scale_gravity_translation(&kfs, &s1, &policy.linear).unwrap();
        let half = crate::sim::to_up_to_scale(&d, 2.0);
        let b = step2_scale_gravity_translation(&set_from(&half), &s1, &policy.linear).unwrap();
        assert!((b.scale / a.scale - 2.0).abs() < 1e-6);
        assert!((a.gravity - b.gravity).norm() < 1e-6);
        assert!((a.p_cb - b.p_cb).norm() < 1e-6);
    }

    #[test]
    fn constant_attitude_is_rank_deficient() {
        let imu: Vec<ImuSample> = (0..400)
            .map(|k| ImuSample { timestamp: k as f64 * 0.005, gyro: Vec3::zeros(), accel: Vec3::new(0.2, 0.0, 9.81) })
            .collect();
        let poses: Vec<CameraPoseUpToScale> = (0..20)
            .map(|f| {
                let t = f as f64 * 0.05;
                CameraPoseUpToScale { rotation: Rotation::identity(), position: Vec3::new(0.1 * t * t, 0.0, 0.0), timestamp: t }
            })
            .collect();
        let kfs = KeyframeSet::from_poses(&poses, imu.into(), ImuNoiseSpec::noiseless(200.0), ImuBias::zero()).unwrap();
        let s1 = Step1Result {
            delta_bg: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            td: 0.0,
            r_bc: Rotation::identity(),
            final_cost: 0.0,
            iterations: 0,
            cost_trace: vec![],
        };
        assert!(matches!(
            step2_scale_gravity_translation(&kfs, &s1, &LinearConfig::default()),
            Err(InitError::RankDeficient { .. })
        ));
    }

    #[test]
    fn gravity_alignment_cases() {
        let r = gravity_alignment(&Vec3::new(0.0, 0.0, -9.81)).unwrap();
        assert_eq!(r, Rotation::identity());
        let r = gravity_alignment(&Vec3::new(0.0, 0.0, 9.81)).unwrap();
        assert!((r * Vec3::new(0.0, 0.0, -1.0) - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        let g = Vec3::new(0.3, -0.2, -9.7);
        let r = gravity_alignment(&g).unwrap();
        assert!((r * Vec3::new(0.0, 0.0, -1.0) - g.normalize()).norm() < 1e-12);
        assert_eq!(gravity_alignment(&Vec3::zeros()), Err(InitError::GravityDegenerate));
    }

    #[test]
    fn compensation_is_additive() {
        let d = synthesize(&short(), &RigConfig::noise_free(), 6).unwrap();
        let kfs = set_from(&d);
        assert_eq!(compensate_time_offset(&kfs, 0.0).unwrap(), kfs);
        let there = compensate_time_offset(&kfs, 0.013).unwrap();
        let back = compensate_time_offset(&there, -0.013).unwrap();
        let inner: Vec<_> = kfs.keyframes().iter().filter(|k| k.pose.timestamp >= 0.013).collect();
        let shifted: Vec<_> = back.keyframes().iter().collect();
        assert_eq!(inner.len(), shifted.len());
        for (a, b) in inner.iter().zip(shifted) {
            assert!((a.pose.timestamp - b.pose.timestamp).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_pulls_perturbed_gravity_back() {
        let d = synthesize(&short(), &RigConfig::noise_free(), 7).unwrap();
        let kfs = set_from(&d);
        let cfg = LinearConfig::default();
        let s1 = step1_rotation_offset_gyrobias(&kfs, &Step1Config::default(), None).unwrap();
        let mut s2 = step2_scale_gravity_translation(&kfs, &s1, &cfg).unwrap();
        s2.gravity = exp_so3(&Vec3::new(2f64.to_radians(), 0.0, 0.0)) * s2.gravity;
        let before = s2.gravity.angle(&d.truth.gravity);
        let s3 = step3_refine(&kfs, &s1, &s2, &cfg).unwrap();
        assert!(s3.gravity.angle(&d.truth.gravity) < before);
        assert!((s3.gravity.norm() - 9.81).abs() < 1e-9);
    }

    #[test]
    fn velocities_match_truth_noise_free() {
        let d = synthesize(&short(), &RigConfig::noise_free(), 8).unwrap();
        let res = initialize_batch(&set_from(&d), &InitPolicy::default()).unwrap();
        let mut sq = 0.0;
        for (k, v) in res.keyframes.keyframes().iter().zip(&res.velocities) {
            let truth = d.frame_state(k.source).velocity;
            sq += (v - truth).norm_squared();
        }
        let rmse = (sq / res.velocities.len() as f64).sqrt();
        assert!(rmse < 1e-3, "rmse {rmse}");
    }

    #[test]
    fn hand_eye_seed_finds_half_turn() {
        let d = synthesize(&short(), &RigConfig::noise_free(), 9).unwrap();
        let seed = hand_eye_seed(&set_from(&d));
        assert!(seed.angle_to(&Rotation::from_euler_ypr(0.0, 0.0, PI)) < 1e-2);
    }
}
