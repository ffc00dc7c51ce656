use proptest::prelude::*;
use vistac_core::imu::preintegrate_between;
use vistac_core::sim::{synthesize, TrajectoryConfig};
use vistac_core::{ImuBias, ImuNoiseSpec, Mat3, RigConfig};

fn short(duration: f64) -> TrajectoryConfig {
    TrajectoryConfig { duration, ..TrajectoryConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pixels_inside_the_image(seed in 0u64..10_000) {
        let d = synthesize(&short(3.0), &RigConfig::default(), seed).unwrap();
        let (w, h) = (d.intrinsics.width, d.intrinsics.height);
        for f in &d.frames {
            prop_assert!(!f.observations.is_empty());
            for o in &f.observations {
                prop_assert!(o.pixel.x >= 0.0 && o.pixel.x < w && o.pixel.y >= 0.0 && o.pixel.y < h);
                prop_assert!(o.landmark < d.landmarks.len());
            }
        }
    }

    #[test]
    fn camera_stamps_carry_the_offset(seed in 0u64..10_000, td in -0.1..0.1f64) {
        let rig = RigConfig { time_offset: td, ..RigConfig::default() };
        let d = synthesize(&short(2.0), &rig, seed).unwrap();
        for f in &d.frames {
            prop_assert!((f.pose.timestamp - (d.states[f.imu_index].timestamp + td)).abs() < 1e-12);
        }
    }
}

#[test]
fn noise_free_measurements_invert_exactly() {
    let d = synthesize(&short(3.0), &RigConfig::noise_free(), 3).unwrap();
    for k in 0..d.imu.len() {
        let s = &d.states[k];
        let accel = s.rotation.transpose() * (d.true_accel[k] - d.truth.gravity);
        assert!((d.imu[k].gyro - d.true_omega[k]).norm() <= 1e-12);
        assert!((d.imu[k].accel - accel).norm() <= 1e-12);
        assert_eq!(d.imu[k].timestamp, s.timestamp);
    }
}

/// Per-block traces of the empirical preintegration error covariance over
/// many seeds against the propagated covariance.
fn covariance_agreement(rate: f64) -> [f64; 3] {
    let noise = ImuNoiseSpec { gyro_walk: 0.0, accel_walk: 0.0, rate, ..ImuNoiseSpec::nominal() };
    let noisy = RigConfig { noise, bias: ImuBias::zero(), ..RigConfig::default() };
    let clean = RigConfig { noise: ImuNoiseSpec::noiseless(rate), ..RigConfig::noise_free() };
    let traj = short(0.5);
    let (t0, t1) = (0.1, 0.3);
    let reference = synthesize(&traj, &clean, 0).unwrap();
    let base = preintegrate_between(&reference.imu, t0, t1, ImuBias::zero(), &noise).unwrap();
    let runs = 1000;
    let mut sums = [Mat3::zeros(); 3];
    let mut propagated = [0.0; 3];
    for seed in 0..runs {
        let d = synthesize(&traj, &noisy, seed).unwrap();
        let pre = preintegrate_between(&d.imu, t0, t1, ImuBias::zero(), &noise).unwrap();
        let errs = [(base.d_r.transpose() * pre.d_r).log(), pre.d_v - base.d_v, pre.d_p - base.d_p];
        for (s, e) in sums.iter_mut().zip(errs) {
            *s += e * e.transpose();
        }
        for (b, p) in propagated.iter_mut().enumerate() {
            *p = pre.covariance.fixed_view::<3, 3>(3 * b, 3 * b).trace();
        }
    }
    let mut ratios = [0.0; 3];
    for b in 0..3 {
        ratios[b] = (sums[b] / runs as f64).trace() / propagated[b];
    }
    ratios
}

#[test]
fn propagated_covariance_matches_monte_carlo_at_two_rates() {
    for rate in [200.0, 400.0] {
        let ratios = covariance_agreement(rate);
        for (name, r) in ["rotation", "velocity", "position"].iter().zip(ratios) {
            assert!((r - 1.0).abs() < 0.15, "{rate} Hz {name}: empirical/propagated = {r}");
        }
    }
}
