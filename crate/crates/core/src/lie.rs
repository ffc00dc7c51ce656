//! SO(3) calculus: skew operators, exponential/logarithm maps and the
//! left/right Jacobians used by preintegration, the initializer and the
//! estimator.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::LieError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle `exp_so3` switches to its Taylor expansion.
pub const EXP_SMALL_ANGLE: f64 = 1e-8;
/// Below this angle the Jacobians switch to their Taylor expansions.
pub const JACOBIAN_SMALL_ANGLE: f64 = 1e-5;
/// Orthonormality defect above which a rotation gets re-projected onto SO(3).
pub const RENORMALIZE_THRESHOLD: f64 = 1e-9;

const SKEW_TOLERANCE: f64 = 1e-9;
const ROTATION_TOLERANCE: f64 = 1e-9;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Fails when `m` is not skew-symmetric within 1e-9.
pub fn vee(m: &Mat3) -> Result<Vec3, LieError> {
    let defect = (m + m.transpose()).abs().max();
    if defect > SKEW_TOLERANCE {
        return Err(LieError::NotSkewSymmetric { defect });
    }
    Ok(vee_unchecked(m))
}

#[inline]
fn vee_unchecked(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let k2 = k * k;
    if theta2.sqrt() < EXP_SMALL_ANGLE {
        return Rotation(Mat3::identity() + k + 0.5 * k2);
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Rotation(Mat3::identity() + a * k + b * k2)
}

/// Logarithm map; the returned vector has norm in `[0, pi]`.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = &r.0;
    let skew = vee_unchecked(&(m - m.transpose())) * 0.5; // sin(theta) * axis
    let sin_theta = skew.norm();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < EXP_SMALL_ANGLE {
        // sin(theta)/theta -> 1
        return skew * (1.0 + theta * theta / 6.0);
    }
    if cos_theta > -0.99 {
        return skew * (theta / sin_theta);
    }

    // Near pi: (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
    let sym = (m + m.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let k = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vec3 = sym.column(k).into_owned();
    let n = axis.norm();
    if n > 0.0 {
        axis /= n;
    }
    let dot = axis.dot(&skew);
    if dot < 0.0 || (dot == 0.0 && first_nonzero_negative(&axis)) {
        axis = -axis;
    }
    axis * theta
}

fn first_nonzero_negative(v: &Vec3) -> bool {
    v.iter()
        .find(|c| c.abs() > 1e-12)
        .map(|c| *c < 0.0)
        .unwrap_or(false)
}

/// Right Jacobian of SO(3): `Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    if theta < JACOBIAN_SMALL_ANGLE {
        return Mat3::identity() - 0.5 * k + k2 / 6.0;
    }
    let t2 = theta * theta;
    Mat3::identity() - ((1.0 - theta.cos()) / t2) * k + ((theta - theta.sin()) / (t2 * theta)) * k2
}

pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    if theta < JACOBIAN_SMALL_ANGLE {
        return Mat3::identity() + 0.5 * k + k2 / 12.0;
    }
    let t2 = theta * theta;
    let c = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + c * k2
}

/// Left Jacobian, `Jl(phi) = Jr(-phi)`.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    right_jacobian(&-phi)
}

pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    right_jacobian_inv(&-phi)
}

/// A 3x3 rotation matrix, kept orthonormal with determinant +1.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and handedness within 1e-9.
    pub fn from_matrix(m: Mat3) -> Result<Self, LieError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(LieError::NotARotation { defect: f64::INFINITY });
        }
        let defect = (m.transpose() * m - Mat3::identity()).norm();
        let det_err = (m.determinant() - 1.0).abs();
        if defect > ROTATION_TOLERANCE || det_err > ROTATION_TOLERANCE {
            return Err(LieError::NotARotation { defect: defect.max(det_err) });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix the caller guarantees is a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary matrix onto the nearest rotation (polar decomposition).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * v_t;
        }
        Rotation(r)
    }

    pub fn exp(phi: &Vec3) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> Vec3 {
        log_so3(self)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn renormalized(&self) -> Self {
        if self.orthonormality_defect() > RENORMALIZE_THRESHOLD {
            Rotation::project(&self.0)
        } else {
            *self
        }
    }

    /// Geodesic angle between two rotations, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).log().norm()
    }

    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`, angles in radians.
    pub fn from_euler_ypr(yaw: f64, pitch: f64, roll: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        Rotation(Mat3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        ))
    }

    /// Inverse of [`Rotation::from_euler_ypr`]; returns `[yaw, pitch, roll]`.
    pub fn to_euler_ypr(&self) -> Vec3 {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        Vec3::new(yaw, pitch, roll)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.to_euler_ypr() * (180.0 / std::f64::consts::PI);
        write!(f, "Rotation(ypr_deg=[{:.6}, {:.6}, {:.6}])", e.x, e.y, e.z)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    #[inline]
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    #[inline]
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    #[inline]
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    #[inline]
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = a % two_pi;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    } else if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * scale
    }

    /// Truncated power series of the matrix exponential.
    fn expm_series(m: &Mat3, terms: usize) -> Mat3 {
        let mut sum = Mat3::identity();
        let mut term = Mat3::identity();
        for k in 1..terms {
            term = term * m / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
        let expected = Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(hat(&Vec3::new(1.0, 2.0, 3.0)), expected);
    }

    #[test]
    fn hat_matches_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = random_vec(&mut rng, 10.0);
            let b = random_vec(&mut rng, 10.0);
            assert!((hat(&a) * b - a.cross(&b)).norm() < 1e-12);
        }
    }

    #[test]
    fn vee_examples() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
        assert_eq!(vee(&Mat3::zeros()).unwrap(), Vec3::zeros());
        assert!(matches!(
            vee(&Mat3::identity()),
            Err(LieError::NotSkewSymmetric { .. })
        ));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Mat3::identity());
        let half = exp_so3(&Vec3::new(PI, 0.0, 0.0));
        let expected = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        assert!((half.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn exp_matches_power_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let phi = random_vec(&mut rng, 1.0);
            let reference = expm_series(&hat(&phi), 20);
            assert!((exp_so3(&phi).matrix() - reference).norm() < 1e-12);
        }
    }

    #[test]
    fn exp_small_angle_branch_is_orthonormal() {
        let r = exp_so3(&Vec3::new(3e-9, -1e-9, 2e-9));
        assert!(r.orthonormality_defect() < 1e-15);
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
        let phi = Vec3::new(0.1, -0.2, 0.3);
        assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-10);

        let half = Rotation::from_matrix(Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))).unwrap();
        let w = log_so3(&half);
        assert!((w.norm() - PI).abs() < 1e-12);
        assert!((w.normalize() - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn log_near_pi_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let angle = PI - rng.random_range(1e-6..0.2);
            let phi = axis * angle;
            let back = log_so3(&exp_so3(&phi));
            assert!((back - phi).norm() < 1e-10, "{back} vs {phi}");
        }
    }

    #[test]
    fn log_exp_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let angle = rng.random_range(0.0..PI - 1e-6);
            let phi = axis * angle;
            assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-10);
        }
    }

    #[test]
    fn jacobians_at_zero_are_identity() {
        let z = Vec3::zeros();
        for j in [
            right_jacobian(&z),
            right_jacobian_inv(&z),
            left_jacobian(&z),
            left_jacobian_inv(&z),
        ] {
            assert_eq!(j, Mat3::identity());
        }
    }

    #[test]
    fn right_jacobian_first_order_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let phi = random_vec(&mut rng, 1.5);
            let d = random_vec(&mut rng, 1.0).normalize() * 1e-6;
            let lhs = exp_so3(&(phi + d));
            let rhs = exp_so3(&phi) * exp_so3(&(right_jacobian(&phi) * d));
            assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-11);
            let lhs_l = exp_so3(&(left_jacobian(&phi) * d)) * exp_so3(&phi);
            assert!((lhs.matrix() - lhs_l.matrix()).norm() < 1e-11);
        }
    }

    #[test]
    fn jacobian_inverses() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let phi = axis * rng.random_range(1e-4..3.0);
            let e1 = (right_jacobian(&phi) * right_jacobian_inv(&phi) - Mat3::identity()).norm();
            let e2 = (left_jacobian_inv(&phi) * left_jacobian(&phi) - Mat3::identity()).norm();
            assert!(e1 < 1e-9 && e2 < 1e-9, "{e1} {e2}");
            let reference = left_jacobian(&phi).try_inverse().unwrap();
            assert!((reference - left_jacobian_inv(&phi)).norm() < 1e-9);
        }
        // across the series/closed-form switch
        for theta in [0.5e-5, 0.99e-5, 1.01e-5, 2e-5] {
            let phi = Vec3::new(theta, 0.0, 0.0);
            assert!((right_jacobian(&phi) * right_jacobian_inv(&phi) - Mat3::identity()).norm() < 1e-10);
        }
    }

    #[test]
    fn left_is_right_of_negated() {
        let phi = Vec3::new(0.3, -0.7, 1.1);
        assert_eq!(left_jacobian(&phi), right_jacobian(&-phi));
    }

    #[test]
    fn adjoint_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = exp_so3(&random_vec(&mut rng, 2.0));
            let phi = random_vec(&mut rng, 1.0);
            let lhs = r * exp_so3(&phi) * r.transpose();
            let rhs = exp_so3(&(r * phi));
            assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-10);
        }
    }

    #[test]
    fn first_order_approximation_is_quadratic() {
        let dir = Vec3::new(0.3, -0.5, 0.8).normalize();
        let mut ratios = Vec::new();
        let mut t = 1e-6;
        while t <= 1e-2 {
            let phi = dir * t;
            let err = (exp_so3(&phi).matrix() - (Mat3::identity() + hat(&phi))).norm();
            ratios.push(err / (t * t));
            t *= 10.0;
        }
        let c = ratios[ratios.len() / 2];
        // second-order term is (phi^)^2 / 2 whose norm is |phi|^2/sqrt(2)
        assert!((c - 0.5f64.sqrt()).abs() < 1e-3);
        for r in &ratios[1..] {
            assert!((r - c).abs() / c < 1e-2, "{ratios:?}");
        }
    }

    #[test]
    fn bch_error_shrinks_linearly() {
        let phi1 = Vec3::new(0.4, -0.2, 0.9);
        let dir = Vec3::new(1.0, 2.0, -1.0).normalize();
        let mut errs = Vec::new();
        for k in 0..4 {
            let small = dir * 10f64.powi(-2 - k);
            let exact = log_so3(&(exp_so3(&phi1) * exp_so3(&small)));
            let approx = right_jacobian_inv(&phi1) * small + phi1;
            // relative to the size of the small argument
            errs.push((exact - approx).norm() / small.norm());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 10.0).abs() < 1.0, "{errs:?}");
        }
    }

    #[test]
    fn euler_roundtrip_and_wrap() {
        let r = Rotation::from_euler_ypr(0.3, -0.2, 2.9);
        let e = r.to_euler_ypr();
        assert!((e - Vec3::new(0.3, -0.2, 2.9)).norm() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn projection_restores_orthonormality() {
        let mut r = Rotation::identity();
        let step = exp_so3(&Vec3::new(1e-3, 2e-3, -1e-3));
        for _ in 0..100_000 {
            r = (r * step).renormalized();
        }
        assert!(r.orthonormality_defect() < 1e-9);
        assert!(Rotation::from_matrix(*r.matrix()).is_ok());
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Rotation::from_matrix(m).is_err());
    }
}
