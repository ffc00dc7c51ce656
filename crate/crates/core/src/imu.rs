//! IMU samples, the measurement model and keyframe-to-keyframe
//! preintegration with first-order bias Jacobians.

use nalgebra::{SMatrix, Vector3};

use crate::error::ImuError;
use crate::lie::{exp_so3, hat, right_jacobian, Mat3, Rotation, Vec3};

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Mat6 = SMatrix<f64, 6, 6>;

/// Standard gravity magnitude used throughout.
pub const GRAVITY_MAGNITUDE: f64 = 9.81;

/// Diagonal added to the propagated covariances before inversion so that
/// noise-free configurations still produce finite information matrices.
const PREINT_COV_FLOOR: f64 = 1e-12;
const WALK_COV_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuBias {
    pub fn new(gyro: Vec3, accel: Vec3) -> Self {
        Self { gyro, accel }
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Continuous-time noise densities of the inertial sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseSpec {
    /// rad/(s sqrt(Hz))
    pub gyro_density: f64,
    /// m/(s^2 sqrt(Hz))
    pub accel_density: f64,
    /// rad/(s^2 sqrt(Hz))
    pub gyro_walk: f64,
    /// m/(s^3 sqrt(Hz))
    pub accel_walk: f64,
    /// Hz
    pub rate: f64,
}

impl ImuNoiseSpec {
    /// EuRoC-like densities at 200 Hz.
    pub fn nominal() -> Self {
        Self {
            gyro_density: 0.00017,
            accel_density: 0.002,
            gyro_walk: 0.00002,
            accel_walk: 0.003,
            rate: 200.0,
        }
    }

    pub fn noiseless(rate: f64) -> Self {
        Self { gyro_density: 0.0, accel_density: 0.0, gyro_walk: 0.0, accel_walk: 0.0, rate }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn is_valid(&self) -> bool {
        [self.gyro_density, self.accel_density, self.gyro_walk, self.accel_walk]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0)
            && self.rate.is_finite()
            && self.rate > 0.0
    }
}

/// Relative motion between two keyframes computed from raw measurements
/// at a fixed reference bias, plus everything needed to correct it for a
/// small bias change and to weight it in a cost function.
#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    pub d_r: Rotation,
    pub d_v: Vec3,
    pub d_p: Vec3,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub jg_dr: Mat3,
    pub jg_dv: Mat3,
    pub ja_dv: Mat3,
    pub jg_dp: Mat3,
    pub ja_dp: Mat3,
    pub bias_ref: ImuBias,
    /// Covariance of the stacked (rotation, velocity, position) error.
    pub covariance: Mat9,
    pub info_preint: Mat9,
    pub info_walk: Mat6,
}

impl PreintegratedImu {
    /// Bias-corrected `(dR, dv, dp)` for a bias `bias_ref + (delta_bg, delta_ba)`.
    pub fn bias_corrected_terms(&self, delta_bg: &Vec3, delta_ba: &Vec3) -> (Rotation, Vec3, Vec3) {
        let r = self.d_r * exp_so3(&(self.jg_dr * delta_bg));
        let v = self.d_v + self.jg_dv * delta_bg + self.ja_dv * delta_ba;
        let p = self.d_p + self.jg_dp * delta_bg + self.ja_dp * delta_ba;
        (r, v, p)
    }

    /// Rotation block of the information matrix.
    pub fn rotation_information(&self) -> Mat3 {
        let cov: Mat3 = self.covariance.fixed_view::<3, 3>(0, 0).into_owned()
            + Mat3::identity() * PREINT_COV_FLOOR;
        invert_spd3(&cov)
    }

    /// Information with the cross-covariances between the rotation,
    /// velocity and position blocks discarded.
    pub fn block_diagonal_information(&self) -> Mat9 {
        let mut info = Mat9::zeros();
        for b in 0..3 {
            let cov: Mat3 = self.covariance.fixed_view::<3, 3>(3 * b, 3 * b).into_owned()
                + Mat3::identity() * PREINT_COV_FLOOR;
            info.fixed_view_mut::<3, 3>(3 * b, 3 * b).copy_from(&invert_spd3(&cov));
        }
        info
    }
}

fn invert_spd3(m: &Mat3) -> Mat3 {
    m.cholesky()
        .map(|c| c.inverse())
        .or_else(|| m.try_inverse())
        .unwrap_or_else(Mat3::identity)
}

/// Incremental preintegration under zero-order hold.
#[derive(Debug, Clone)]
pub struct Preintegrator {
    out: PreintegratedImu,
    noise: ImuNoiseSpec,
}

impl Preintegrator {
    pub fn new(bias_ref: ImuBias, noise: ImuNoiseSpec, t_start: f64) -> Self {
        Self {
            out: PreintegratedImu {
                d_r: Rotation::identity(),
                d_v: Vec3::zeros(),
                d_p: Vec3::zeros(),
                dt: 0.0,
                t_start,
                t_end: t_start,
                jg_dr: Mat3::zeros(),
                jg_dv: Mat3::zeros(),
                ja_dv: Mat3::zeros(),
                jg_dp: Mat3::zeros(),
                ja_dp: Mat3::zeros(),
                bias_ref,
                covariance: Mat9::zeros(),
                info_preint: Mat9::zeros(),
                info_walk: Mat6::zeros(),
            },
            noise,
        }
    }

    /// Holds `(gyro, accel)` constant over `dt` seconds.
    pub fn integrate(&mut self, gyro: &Vec3, accel: &Vec3, dt: f64) {
        let o = &mut self.out;
        let w = gyro - o.bias_ref.gyro;
        let a = accel - o.bias_ref.accel;
        let dt2 = dt * dt;

        let step = exp_so3(&(w * dt));
        let jr = right_jacobian(&(w * dt));
        let rm = *o.d_r.matrix();
        let a_hat = hat(&a);
        let ra_hat = rm * a_hat;

        // Covariance propagation (rotation, velocity, position ordering).
        let mut a_mat = Mat9::identity();
        a_mat.fixed_view_mut::<3, 3>(0, 0).copy_from(&step.matrix().transpose());
        a_mat.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ra_hat * dt));
        a_mat.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * ra_hat * dt2));
        a_mat.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Mat3::identity() * dt));
        let period = self.noise.period();
        let var_g = self.noise.gyro_density.powi(2) / period;
        let var_a = self.noise.accel_density.powi(2) / period;
        let bg = jr * dt;
        let mut q = Mat9::zeros();
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&(bg * bg.transpose() * var_g));
        let bv = rm * dt;
        let bp = rm * (0.5 * dt2);
        q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(bv * bv.transpose() * var_a));
        q.fixed_view_mut::<3, 3>(3, 6).copy_from(&(bv * bp.transpose() * var_a));
        q.fixed_view_mut::<3, 3>(6, 3).copy_from(&(bp * bv.transpose() * var_a));
        q.fixed_view_mut::<3, 3>(6, 6).copy_from(&(bp * bp.transpose() * var_a));
        o.covariance = a_mat * o.covariance * a_mat.transpose() + q;

        // Bias Jacobians; position uses the velocity/rotation terms of the previous step.
        o.jg_dp += o.jg_dv * dt - 0.5 * ra_hat * o.jg_dr * dt2;
        o.ja_dp += o.ja_dv * dt - 0.5 * rm * dt2;
        o.jg_dv -= ra_hat * o.jg_dr * dt;
        o.ja_dv -= rm * dt;
        o.jg_dr = step.matrix().transpose() * o.jg_dr - jr * dt;

        o.d_p += o.d_v * dt + 0.5 * (rm * a) * dt2;
        o.d_v += rm * a * dt;
        o.d_r = (o.d_r * step).renormalized();
        o.dt += dt;
        o.t_end += dt;
    }

    pub fn finish(mut self) -> PreintegratedImu {
        let o = &mut self.out;
        o.covariance = 0.5 * (o.covariance + o.covariance.transpose());
        let cov = o.covariance + Mat9::identity() * PREINT_COV_FLOOR;
        o.info_preint = cov
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| cov.try_inverse().unwrap_or_else(Mat9::identity));
        o.info_preint = 0.5 * (o.info_preint + o.info_preint.transpose());
        let wg = self.noise.gyro_walk.powi(2) * o.dt + WALK_COV_FLOOR;
        let wa = self.noise.accel_walk.powi(2) * o.dt + WALK_COV_FLOOR;
        let diag = nalgebra::Vector6::new(1.0 / wg, 1.0 / wg, 1.0 / wg, 1.0 / wa, 1.0 / wa, 1.0 / wa);
        o.info_walk = Mat6::from_diagonal(&diag);
        self.out
    }
}

fn check_monotonic(samples: &[ImuSample]) -> Result<(), ImuError> {
    if samples.is_empty() {
        return Err(ImuError::EmptyStream);
    }
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(ImuError::NonMonotonicTimestamps { index: i + 1 });
        }
    }
    Ok(())
}

/// Preintegrates an ordered sample list. Each sample is held until the next
/// one; the final sample is held for one nominal period.
pub fn preintegrate(
    samples: &[ImuSample],
    bias_ref: ImuBias,
    noise: &ImuNoiseSpec,
) -> Result<PreintegratedImu, ImuError> {
    check_monotonic(samples)?;
    let mut pre = Preintegrator::new(bias_ref, *noise, samples[0].timestamp);
    for (k, s) in samples.iter().enumerate() {
        let dt = samples
            .get(k + 1)
            .map(|n| n.timestamp - s.timestamp)
            .unwrap_or_else(|| noise.period());
        pre.integrate(&s.gyro, &s.accel, dt);
    }
    Ok(pre.finish())
}

/// Preintegrates the part of `stream` covering `[t_start, t_end]`.
///
/// Sample `k` covers `[t_k, t_{k+1})`; the first and last samples touching
/// the window are truncated to it.
pub fn preintegrate_between(
    stream: &[ImuSample],
    t_start: f64,
    t_end: f64,
    bias_ref: ImuBias,
    noise: &ImuNoiseSpec,
) -> Result<PreintegratedImu, ImuError> {
    if stream.is_empty() {
        return Err(ImuError::EmptyStream);
    }
    let first = stream[0].timestamp;
    let last_end = stream[stream.len() - 1].timestamp + noise.period();
    if !(t_end > t_start) || t_start < first - 1e-12 || t_end > last_end + 1e-12 {
        return Err(ImuError::NotCovered { start: t_start, end: t_end });
    }
    let mut k = sample_index_at(stream, t_start);
    let mut pre = Preintegrator::new(bias_ref, *noise, t_start);
    let mut t = t_start;
    while t < t_end && k < stream.len() {
        let s = &stream[k];
        let seg_end = stream
            .get(k + 1)
            .map(|n| n.timestamp)
            .unwrap_or(s.timestamp + noise.period())
            .min(t_end);
        let dt = seg_end - t;
        if dt > 0.0 {
            pre.integrate(&s.gyro, &s.accel, dt);
        }
        t = seg_end;
        k += 1;
    }
    let mut out = pre.finish();
    // exact bookkeeping of the window bounds
    out.t_end = t_end;
    out.dt = t_end - t_start;
    Ok(out)
}

/// Index of the sample whose hold interval contains `t`.
pub fn sample_index_at(stream: &[ImuSample], t: f64) -> usize {
    stream.partition_point(|s| s.timestamp <= t).saturating_sub(1)
}

/// Index of the sample whose timestamp is closest to `t`.
pub fn nearest_sample(stream: &[ImuSample], t: f64) -> usize {
    let i = stream.partition_point(|s| s.timestamp < t);
    if i == 0 {
        return 0;
    }
    if i >= stream.len() {
        return stream.len() - 1;
    }
    if (stream[i].timestamp - t).abs() < (t - stream[i - 1].timestamp).abs() {
        i
    } else {
        i - 1
    }
}

/// Synthesizes gyro/accel readings from the true motion:
/// `gyro = w + b_g + n_g`, `accel = R^T (a - g) + b_a + n_a`.
pub fn imu_measure(
    true_omega: &Vec3,
    true_accel_world: &Vec3,
    attitude: &Rotation,
    gravity: &Vec3,
    bias: &ImuBias,
    noise_draw: (&Vec3, &Vec3),
) -> (Vec3, Vec3) {
    let gyro = true_omega + bias.gyro + noise_draw.0;
    let accel = attitude.transpose() * (true_accel_world - gravity) + bias.accel + noise_draw.1;
    (gyro, accel)
}

/// Standard gravity vector `[0, 0, -G]`.
pub fn gravity_vector() -> Vec3 {
    Vector3::new(0.0, 0.0, -GRAVITY_MAGNITUDE)
}
