//! Error metrics, trajectory alignment and per-cell aggregation.

use crate::error::EvalError;
use crate::lie::{wrap_angle, Mat3, Rotation, Vec3};

/// Errors of one pipeline run. Every numeric field is non-negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    /// Norm of the yaw/pitch/roll difference, degrees.
    pub rotation_deg: f64,
    pub translation_m: f64,
    pub offset_ms: f64,
    /// Relative scale error.
    pub scale_rel: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
    pub velocity_rmse: f64,
    pub trajectory_rmse: f64,
    pub wall_time_s: f64,
    pub keyframes: usize,
    /// Reason the run failed; numeric fields are meaningless when set.
    pub failure: Option<String>,
}

impl MetricsRow {
    pub fn failed(reason: impl Into<String>) -> Self {
        Self { failure: Some(reason.into()), ..Self::default() }
    }

    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }

    pub const HEADER: [&'static str; 10] = [
        "rotation_deg",
        "translation_m",
        "offset_ms",
        "scale_rel",
        "gyro_bias",
        "accel_bias",
        "velocity_rmse",
        "trajectory_rmse",
        "wall_time_s",
        "keyframes",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.rotation_deg,
            self.translation_m,
            self.offset_ms,
            self.scale_rel,
            self.gyro_bias,
            self.accel_bias,
            self.velocity_rmse,
            self.trajectory_rmse,
            self.wall_time_s,
            self.keyframes as f64,
        ]
    }

    fn from_values(v: &[f64; 10]) -> Self {
        Self {
            rotation_deg: v[0],
            translation_m: v[1],
            offset_ms: v[2],
            scale_rel: v[3],
            gyro_bias: v[4],
            accel_bias: v[5],
            velocity_rmse: v[6],
            trajectory_rmse: v[7],
            wall_time_s: v[8],
            keyframes: v[9].round() as usize,
            failure: None,
        }
    }
}

/// Norm of the wrapped yaw/pitch/roll difference between two rotations, degrees.
pub fn rotation_error_deg(estimate: &Rotation, truth: &Rotation) -> f64 {
    let a = estimate.to_euler_ypr();
    let b = truth.to_euler_ypr();
    a.zip_map(&b, |x, y| wrap_angle(x - y)).norm().to_degrees()
}

/// Median of a non-empty list (mean of the middle pair for even lengths).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub median: MetricsRow,
    pub successes: usize,
    pub failures: usize,
}

/// Component-wise median over the successful rows.
pub fn aggregate(rows: &[MetricsRow]) -> Result<Aggregate, EvalError> {
    let ok: Vec<&MetricsRow> = rows.iter().filter(|r| r.is_ok()).collect();
    if ok.is_empty() {
        return Err(EvalError::AllRunsFailed(rows.len()));
    }
    let mut out = [0.0; 10];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut col: Vec<f64> = ok.iter().map(|r| r.values()[c]).collect();
        *slot = median(&mut col);
    }
    Ok(Aggregate { median: MetricsRow::from_values(&out), successes: ok.len(), failures: rows.len() - ok.len() })
}

/// Similarity taking estimated points onto the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rotation: Rotation,
    pub translation: Vec3,
    pub scale: f64,
    pub rmse: f64,
}

impl Alignment {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * *p) + self.translation
    }
}

/// Closed-form least-squares alignment (rotation, translation and
/// optionally scale) followed by the position RMSE.
pub fn align_and_rmse(estimate: &[Vec3], truth: &[Vec3], with_scale: bool) -> Result<Alignment, EvalError> {
    let n = estimate.len().min(truth.len());
    if n < 3 {
        return Err(EvalError::TooFewPoses { required: 3, available: n });
    }
    let (estimate, truth) = (&estimate[..n], &truth[..n]);
    let nf = n as f64;
    let me = estimate.iter().sum::<Vec3>() / nf;
    let mt = truth.iter().sum::<Vec3>() / nf;
    let mut cov = Mat3::zeros();
    let mut var_e = 0.0;
    for (e, t) in estimate.iter().zip(truth) {
        cov += (t - mt) * (e - me).transpose();
        var_e += (e - me).norm_squared();
    }
    cov /= nf;
    var_e /= nf;
    let spread = {
        let mut c = Mat3::zeros();
        for e in estimate {
            c += (e - me) * (e - me).transpose();
        }
        c.symmetric_eigenvalues()
    };
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0].max(1e-300)) {
        return Err(EvalError::DegenerateTrajectory);
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let d = (u * v_t).determinant().signum();
    let s_mat = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let r = u * s_mat * v_t;
    let scale = if with_scale {
        let trace: f64 = (Mat3::from_diagonal(&svd.singular_values) * s_mat).trace();
        trace / var_e
    } else {
        1.0
    };
    let rotation = Rotation::project(&r);
    let translation = mt - scale * (rotation * me);
    let mut al = Alignment { rotation, translation, scale, rmse: 0.0 };
    let sq: f64 = estimate.iter().zip(truth).map(|(e, t)| (al.apply(e) - t).norm_squared()).sum();
    al.rmse = (sq / nf).sqrt();
    Ok(al)
}

/// Velocity RMSE after the best-fitting rotation of the estimates onto the truth.
pub fn rotated_velocity_rmse(estimate: &[Vec3], truth: &[Vec3]) -> f64 {
    let n = estimate.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let mut h = Mat3::zeros();
    for (e, t) in estimate.iter().zip(truth) {
        h += t * e.transpose();
    }
    let svd = h.svd(true, true);
    let r = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => {
            let d = (u * v_t).determinant().signum();
            u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
        }
        _ => Mat3::identity(),
    };
    let sq: f64 = estimate.iter().zip(truth).map(|(e, t)| (r * e - t).norm_squared()).sum();
    (sq / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_so3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn helix(n: usize) -> Vec<Vec3> {
        (0..n).map(|k| {
            let t = k as f64 * 0.1;
            Vec3::new(3.0 * t.cos(), 3.0 * t.sin(), 0.4 * (2.0 * t).sin())
        })
        .collect()
    }

    #[test]
    fn median_definition() {
        assert_eq!(median(&mut [1.0, 100.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn aggregate_single_and_failures() {
        let row = MetricsRow { rotation_deg: 0.1, keyframes: 40, ..Default::default() };
        let a = aggregate(std::slice::from_ref(&row)).unwrap();
        assert_eq!(a.median, row);
        let b = aggregate(&[row.clone(), MetricsRow::failed("x")]).unwrap();
        assert_eq!((b.successes, b.failures), (1, 1));
        assert_eq!(aggregate(&[MetricsRow::failed("x")]), Err(EvalError::AllRunsFailed(1)));
    }

    #[test]
    fn alignment_removes_similarity() {
        let truth = helix(50);
        let r = exp_so3(&Vec3::new(0.0, 0.0, 30f64.to_radians()));
        let est: Vec<Vec3> = truth.iter().map(|p| 0.5 * (r * *p) + Vec3::new(1.0, -2.0, 3.0)).collect();
        assert!(align_and_rmse(&truth, &truth, false).unwrap().rmse < 1e-12);
        let al = align_and_rmse(&est, &truth, true).unwrap();
        assert!(al.rmse < 1e-9);
        assert!((al.scale - 2.0).abs() < 1e-9);
        let rigid: Vec<Vec3> = truth.iter().map(|p| r * *p + Vec3::new(1.0, 0.0, 0.0)).collect();
        assert!(align_and_rmse(&rigid, &truth, false).unwrap().rmse < 1e-9);
    }

    #[test]
    fn alignment_rejects_degenerate_input() {
        let line: Vec<Vec3> = (0..10).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        assert_eq!(align_and_rmse(&line, &line, true), Err(EvalError::DegenerateTrajectory));
        assert_eq!(
            align_and_rmse(&line[..2], &line[..2], true),
            Err(EvalError::TooFewPoses { required: 3, available: 2 })
        );
    }

    #[test]
    fn rmse_matches_injected_noise() {
        let truth = helix(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = 0.01;
        let est: Vec<Vec3> = truth
            .iter()
            .map(|p| {
                p + Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ) * sigma
            })
            .collect();
        let rmse = align_and_rmse(&est, &truth, true).unwrap().rmse;
        let expected = sigma * 3f64.sqrt();
        assert!((rmse - expected).abs() < 0.1 * expected, "{rmse}");
    }

    #[test]
    fn rotation_error_wraps() {
        let a = Rotation::from_euler_ypr(0.0, 0.0, std::f64::consts::PI - 0.001);
        let b = Rotation::from_euler_ypr(0.0, 0.0, -std::f64::consts::PI + 0.001);
        assert!((rotation_error_deg(&a, &b) - 0.002f64.to_degrees()).abs() < 1e-6);
    }

    #[test]
    fn velocity_rmse_ignores_rotation() {
        let v = helix(20);
        let r = exp_so3(&Vec3::new(0.1, 0.2, 0.3));
        let rotated: Vec<Vec3> = v.iter().map(|x| r * *x).collect();
        assert!(rotated_velocity_rmse(&rotated, &v) < 1e-12);
    }
}
