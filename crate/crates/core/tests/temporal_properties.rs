use proptest::prelude::*;
use vistac_core::lie::exp_so3;
use vistac_core::sim::{analytic_state, TrajectoryConfig};
use vistac_core::{
    camera_from_imu, camera_twist, imu_from_camera, interpolate_camera, interpolate_imu, CameraPoseUpToScale,
    Extrinsics, ImuState, Rotation, TimeOffset, Vec3,
};

fn vec3(s: f64) -> impl Strategy<Value = Vec3> {
    (-s..s, -s..s, -s..s).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    vec3(3.0).prop_map(|p| exp_so3(&p))
}

/// Body state under constant body-frame rate `w` and world velocity `v`.
fn body(r0: &Rotation, p0: &Vec3, w: &Vec3, v: &Vec3, t: f64) -> ImuState {
    ImuState { rotation: *r0 * exp_so3(&(w * t)), position: p0 + v * t, velocity: *v, timestamp: t }
}

fn rot_err(a: &Rotation, b: &Rotation) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

proptest! {
    #[test]
    fn camera_interpolation_exact_on_constant_twist(
        r0 in rotation(), p0 in vec3(5.0), w in vec3(1.5), v in vec3(2.0), dt in 0.02..0.3f64, td in -0.2..0.2f64
    ) {
        let pose = |t: f64| CameraPoseUpToScale { rotation: r0 * exp_so3(&(w * t)), position: p0 + v * t, timestamp: t };
        let tw = camera_twist(&pose(0.0), &pose(dt)).unwrap();
        let got = interpolate_camera(&pose(0.0), &tw, td);
        prop_assert!(rot_err(&got.rotation, &pose(td).rotation) < 1e-9);
        prop_assert!((got.position - pose(td).position).norm() < 1e-9);
        prop_assert!((got.timestamp - td).abs() < 1e-15);
    }

    #[test]
    fn imu_interpolation_exact_on_constant_twist(
        r0 in rotation(), p0 in vec3(5.0), w in vec3(1.5), v in vec3(2.0), td in -0.2..0.2f64
    ) {
        let s = body(&r0, &p0, &w, &v, 1.0);
        let got = interpolate_imu(&s, &w, td);
        let want = body(&r0, &p0, &w, &v, 1.0 - td);
        prop_assert!(rot_err(&got.rotation, &want.rotation) < 1e-9);
        prop_assert!((got.position - want.position).norm() < 1e-9);
    }

    /// A camera stamped `T` saw the instant `T - td`; both maps land on the
    /// same physical instant as the body state at `T`.
    #[test]
    fn camera_and_body_maps_agree(
        r0 in rotation(), p0 in vec3(5.0), w in vec3(1.5), v in vec3(2.0), r_bc in rotation(), td in -0.2..0.2f64
    ) {
        let ex = Extrinsics::new(r_bc, Vec3::zeros());
        let t = 1.0;
        let cam_at = |tt: f64| {
            let b = body(&r0, &p0, &w, &v, tt);
            CameraPoseUpToScale { rotation: b.rotation * ex.r_bc, position: b.position, timestamp: tt + td }
        };
        let (c0, c1) = (cam_at(t - td), cam_at(t - td + 0.1));
        let tw = camera_twist(&c0, &c1).unwrap();
        let (rb, pb) = imu_from_camera(&c0, &tw, td, 1.0, &ex);
        let want = body(&r0, &p0, &w, &v, t);
        prop_assert!(rot_err(&rb, &want.rotation) < 1e-9);
        prop_assert!((pb - want.position).norm() < 1e-9);

        let ex2 = Extrinsics::new(r_bc, Vec3::new(0.1, -0.05, 0.02));
        let (rc, pc) = camera_from_imu(&want, &w, td, &ex2);
        let earlier = body(&r0, &p0, &w, &v, t - td);
        prop_assert!(rot_err(&rc, &(earlier.rotation * ex2.r_bc)) < 1e-9);
        prop_assert!((pc - (earlier.position + earlier.rotation * ex2.p_bc)).norm() < 1e-9);
    }

    #[test]
    fn scale_only_affects_translation(
        r0 in rotation(), p0 in vec3(5.0), w in vec3(1.5), v in vec3(2.0), r_bc in rotation(), p_bc in vec3(0.2),
        td in -0.2..0.2f64, s in 0.1..10.0f64
    ) {
        let c0 = CameraPoseUpToScale { rotation: r0, position: p0, timestamp: 0.0 };
        let c1 = CameraPoseUpToScale { rotation: r0 * exp_so3(&(w * 0.1)), position: p0 + v * 0.1, timestamp: 0.1 };
        let tw = camera_twist(&c0, &c1).unwrap();
        let ex = Extrinsics::new(r_bc, p_bc);
        let (ra, pa) = imu_from_camera(&c0, &tw, td, s, &ex);
        let (rb, pb) = imu_from_camera(&c0, &tw, td, 2.0 * s, &ex);
        prop_assert_eq!(ra, rb);
        prop_assert!(((pb - pa) - (p0 + v * td) * s).norm() < 1e-9 * (1.0 + pa.norm()));
    }

    #[test]
    fn extrinsic_inverse_pair(r_bc in rotation(), p in vec3(1.0)) {
        let ex = Extrinsics::new(r_bc, p);
        prop_assert!((ex.r_cb().matrix() - r_bc.matrix().transpose()).norm() < 1e-12);
        prop_assert!((ex.p_cb() + ex.r_cb() * p).norm() < 1e-12);
        let back = Extrinsics::from_p_cb(r_bc, ex.p_cb());
        prop_assert!((back.p_bc - p).norm() < 1e-12);
    }

    #[test]
    fn offset_cap(td in -2.0..2.0f64) {
        prop_assert_eq!(TimeOffset::new(td).is_ok(), td.abs() <= 0.5);
    }
}

/// On the simulated trajectory the constant-twist error of `imu_from_camera`
/// shrinks as keyframes get closer.
#[test]
fn interpolation_error_shrinks_with_spacing() {
    let traj = TrajectoryConfig::default();
    let ex = Extrinsics::new(exp_so3(&Vec3::new(0.1, -1.5, 0.2)), Vec3::zeros());
    let td = 0.02;
    let error = |h: f64| {
        let mut worst = 0.0f64;
        for k in 0..20 {
            let t = 1.0 + 0.37 * k as f64;
            let cam = |tt: f64| {
                let s = analytic_state(&traj, tt).unwrap();
                CameraPoseUpToScale { rotation: s.rotation * ex.r_bc, position: s.position, timestamp: tt + td }
            };
            let tw = camera_twist(&cam(t - td), &cam(t - td + h)).unwrap();
            let (_, p) = imu_from_camera(&cam(t - td), &tw, td, 1.0, &ex);
            worst = worst.max((p - analytic_state(&traj, t).unwrap().position).norm());
        }
        worst
    };
    let (coarse, fine) = (error(0.2), error(0.05));
    assert!(fine < coarse / 3.0, "coarse {coarse}, fine {fine}");
}
