//! Synthetic camera + IMU rig on a circular trajectory with vertical
//! oscillation, looking out at a cylindrical landmark wall.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::{CameraIntrinsics, Vec2};
use crate::error::SimError;
use crate::imu::{gravity_vector, imu_measure, ImuBias, ImuNoiseSpec, ImuSample};
use crate::lie::{exp_so3, Mat3, Rotation, Vec3};
use crate::temporal::{CameraPoseUpToScale, Extrinsics, ImuState};

/// Fewest landmarks a frame must observe.
pub const MIN_VISIBLE: usize = 8;
const MAX_CLOUD_ATTEMPTS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    pub radius: f64,
    /// rad/s around the circle
    pub angular_rate: f64,
    pub vertical_amplitude: f64,
    pub vertical_frequency: f64,
    pub duration: f64,
    /// Amplitude (rad) of the roll oscillation about the direction of travel.
    pub roll_amplitude: f64,
    pub roll_frequency: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            radius: 3.0,
            angular_rate: 0.85,
            vertical_amplitude: 0.4,
            vertical_frequency: 0.5,
            duration: 10.0,
            roll_amplitude: 0.2,
            roll_frequency: 0.3,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let finite = [
            self.radius,
            self.angular_rate,
            self.vertical_amplitude,
            self.vertical_frequency,
            self.duration,
            self.roll_amplitude,
            self.roll_frequency,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite || self.radius <= 0.0 || self.duration <= 0.0 || self.angular_rate == 0.0 {
            return Err(SimError::InvalidConfig("trajectory needs radius > 0, duration > 0, nonzero rate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigConfig {
    pub extrinsics: Extrinsics,
    /// Camera stamp minus true exposure instant, seconds.
    pub time_offset: f64,
    pub noise: ImuNoiseSpec,
    pub bias: ImuBias,
    pub intrinsics: CameraIntrinsics,
    pub camera_rate: f64,
    pub max_features: usize,
    /// Pixel noise standard deviation.
    pub pixel_noise: f64,
    /// Fraction of observations given a wrong landmark id.
    pub wrong_association: f64,
    /// Per-frame rotation error of the reported visual poses, radians.
    pub pose_rotation_noise: f64,
    /// Per-frame position error of the reported visual poses, metres before scaling.
    pub pose_position_noise: f64,
    pub landmark_count: usize,
    pub landmark_radius: f64,
    pub landmark_height: (f64, f64),
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            extrinsics: default_extrinsics(),
            time_offset: 0.0,
            noise: ImuNoiseSpec::nominal(),
            bias: nominal_bias(),
            intrinsics: CameraIntrinsics::default(),
            camera_rate: 20.0,
            max_features: 500,
            pixel_noise: 1.0,
            wrong_association: 0.0,
            pose_rotation_noise: 0.02f64.to_radians(),
            pose_position_noise: 0.001,
            landmark_count: 2000,
            landmark_radius: 6.0,
            landmark_height: (-2.0, 4.0),
        }
    }
}

impl RigConfig {
    pub fn noise_free() -> Self {
        Self {
            noise: ImuNoiseSpec::noiseless(200.0),
            bias: ImuBias::zero(),
            pixel_noise: 0.0,
            pose_rotation_noise: 0.0,
            pose_position_noise: 0.0,
            ..Self::default()
        }
    }

    /// IMU samples per camera frame.
    pub fn frame_stride(&self) -> Result<usize, SimError> {
        let ratio = self.noise.rate / self.camera_rate;
        let stride = ratio.round();
        if !(self.camera_rate > 0.0) || stride < 1.0 || (ratio - stride).abs() > 1e-9 {
            return Err(SimError::InvalidConfig(format!(
                "imu rate {} must be an integer multiple of camera rate {}",
                self.noise.rate, self.camera_rate
            )));
        }
        Ok(stride as usize)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.frame_stride()?;
        if !self.noise.is_valid() {
            return Err(SimError::InvalidConfig("noise densities must be finite and non-negative".into()));
        }
        if !self.intrinsics.is_valid() {
            return Err(SimError::InvalidConfig("intrinsics need positive focal lengths and size".into()));
        }
        if !(self.pose_rotation_noise >= 0.0) || !(self.pose_position_noise >= 0.0) {
            return Err(SimError::InvalidConfig("pose noise must be non-negative".into()));
        }
        if !(self.pixel_noise >= 0.0) || !(0.0..=1.0).contains(&self.wrong_association) {
            return Err(SimError::InvalidConfig("pixel noise or wrong-association fraction out of range".into()));
        }
        if self.landmark_count < MIN_VISIBLE || !(self.landmark_radius > 0.0) {
            return Err(SimError::InvalidConfig("landmark cloud too small".into()));
        }
        Ok(())
    }
}

/// Camera rotated half a turn about the body x axis, offset by a few cm.
pub fn default_extrinsics() -> Extrinsics {
    Extrinsics::new(Rotation::from_euler_ypr(0.0, 0.0, PI), Vec3::new(0.1, 0.04, 0.03))
}

pub fn nominal_bias() -> ImuBias {
    ImuBias::new(Vec3::new(-0.0023, 0.0249, 0.0817), Vec3::new(-0.0236, 0.1210, 0.0748))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticState {
    pub rotation: Rotation,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Angular velocity in the body frame.
    pub omega_body: Vec3,
    /// Linear acceleration in the world frame.
    pub accel_world: Vec3,
}

/// Closed-form pose and derivatives at time `t`.
///
/// Attitude is `Rz(yaw) Ry(pitch) Rx(roll)` with the body x axis along the
/// velocity and the body z axis pointing horizontally toward the circle
/// centre (modulated by a small roll oscillation).
pub fn analytic_state(cfg: &TrajectoryConfig, t: f64) -> Result<AnalyticState, SimError> {
    if !(t >= 0.0 && t <= cfg.duration) {
        return Err(SimError::OutOfRange { t, duration: cfg.duration });
    }
    Ok(analytic_state_unchecked(cfg, t))
}

fn analytic_state_unchecked(cfg: &TrajectoryConfig, t: f64) -> AnalyticState {
    let (r, w) = (cfg.radius, cfg.angular_rate);
    let a = cfg.vertical_amplitude;
    let kz = 2.0 * PI * cfg.vertical_frequency;
    let (s, c) = (w * t).sin_cos();
    let (sz, cz) = (kz * t).sin_cos();

    let position = Vec3::new(r * c, r * s, a * sz);
    let velocity = Vec3::new(-r * w * s, r * w * c, a * kz * cz);
    let accel_world = Vec3::new(-r * w * w * c, -r * w * w * s, -a * kz * kz * sz);

    let yaw = w * t + PI / 2.0 * w.signum();
    let yaw_dot = w;
    let u = velocity.z / (r * w.abs());
    let u_dot = accel_world.z / (r * w.abs());
    let pitch = -u.atan();
    let pitch_dot = -u_dot / (1.0 + u * u);
    let kr = 2.0 * PI * cfg.roll_frequency;
    let roll = -PI / 2.0 + cfg.roll_amplitude * (kr * t).sin();
    let roll_dot = cfg.roll_amplitude * kr * (kr * t).cos();

    let rotation = Rotation::from_euler_ypr(yaw, pitch, roll);
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let omega_body = Vec3::new(
        roll_dot - yaw_dot * sp,
        pitch_dot * cr + yaw_dot * cp * sr,
        -pitch_dot * sr + yaw_dot * cp * cr,
    );
    AnalyticState { rotation, position, velocity, omega_body, accel_world }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: usize,
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub landmark: usize,
    pub pixel: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub pose: CameraPoseUpToScale,
    /// True exposure instant on the IMU clock.
    pub exposure_time: f64,
    /// Index of the IMU sample taken at the exposure instant.
    pub imu_index: usize,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub extrinsics: Extrinsics,
    pub time_offset: f64,
    /// Bias at the first sample; see `SyntheticDataset::biases` for the walk.
    pub bias: ImuBias,
    pub gravity: Vec3,
    /// Factor dividing the visual positions.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Ground-truth body state at each IMU sample.
    pub states: Vec<ImuState>,
    pub biases: Vec<ImuBias>,
    pub true_omega: Vec<Vec3>,
    pub true_accel: Vec<Vec3>,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<CameraFrame>,
    pub landmarks: Vec<Landmark>,
    pub truth: TruthRecord,
    pub noise: ImuNoiseSpec,
    pub intrinsics: CameraIntrinsics,
}

impl SyntheticDataset {
    pub fn imu_period(&self) -> f64 {
        self.noise.period()
    }

    /// Ground-truth state at the exposure of frame `f`.
    pub fn frame_state(&self, f: usize) -> &ImuState {
        &self.states[self.frames[f].imu_index]
    }

    pub fn camera_poses(&self) -> Vec<CameraPoseUpToScale> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    /// Landmark positions as the visual front-end would report them.
    pub fn landmark_position(&self, id: usize) -> Vec3 {
        self.landmarks[id].position
    }
}

/// Generates a dataset deterministically from `seed`.
///
/// Ground truth is propagated with the same zero-order-hold scheme the
/// preintegration uses, from analytic body rates and accelerations sampled
/// at each IMU instant, so noise-free measurements integrate back exactly.
pub fn synthesize(traj: &TrajectoryConfig, rig: &RigConfig, seed: u64) -> Result<SyntheticDataset, SimError> {
    traj.validate()?;
    rig.validate()?;
    let stride = rig.frame_stride()?;
    let dt = rig.noise.period();
    let n = (traj.duration / dt).floor() as usize + 1;
    let g = gravity_vector();

    let mut imu_rng = stream_rng(seed, 1);
    let sd_g = rig.noise.gyro_density / dt.sqrt();
    let sd_a = rig.noise.accel_density / dt.sqrt();
    let sd_wg = rig.noise.gyro_walk * dt.sqrt();
    let sd_wa = rig.noise.accel_walk * dt.sqrt();

    let start = analytic_state_unchecked(traj, 0.0);
    let mut r = start.rotation;
    let mut v = start.velocity;
    let mut p = start.position;
    let mut bias = rig.bias;

    let mut states = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    let mut true_omega = Vec::with_capacity(n);
    let mut true_accel = Vec::with_capacity(n);
    let mut imu = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let a = analytic_state_unchecked(traj, t);
        states.push(ImuState { rotation: r, position: p, velocity: v, timestamp: t });
        biases.push(bias);
        let ng = gaussian3(&mut imu_rng) * sd_g;
        let na = gaussian3(&mut imu_rng) * sd_a;
        let (gyro, accel) = imu_measure(&a.omega_body, &a.accel_world, &r, &g, &bias, (&ng, &na));
        imu.push(ImuSample { timestamp: t, gyro, accel });
        true_omega.push(a.omega_body);
        true_accel.push(a.accel_world);

        p += v * dt + 0.5 * a.accel_world * dt * dt;
        v += a.accel_world * dt;
        r = (r * exp_so3(&(a.omega_body * dt))).renormalized();
        bias.gyro += gaussian3(&mut imu_rng) * sd_wg;
        bias.accel += gaussian3(&mut imu_rng) * sd_wa;
    }

    let ex = rig.extrinsics;
    let frames_at: Vec<usize> = (0..n).step_by(stride).collect();
    let poses: Vec<(Rotation, Vec3)> = frames_at
        .iter()
        .map(|&k| {
            let s = &states[k];
            (s.rotation * ex.r_bc, s.rotation * ex.p_bc + s.position)
        })
        .collect();

    let mut attempt = 0;
    let (landmarks, observations) = loop {
        let landmarks = landmark_cloud(rig, seed.wrapping_add(attempt));
        let mut obs_rng = stream_rng(seed.wrapping_add(attempt), 3);
        let mut all = Vec::with_capacity(poses.len());
        let mut failed = None;
        for (f, (rc, pc)) in poses.iter().enumerate() {
            let obs = observe(rig, &landmarks, rc, pc, &mut obs_rng);
            if obs.len() < MIN_VISIBLE {
                failed = Some((f, obs.len()));
                break;
            }
            all.push(obs);
        }
        match failed {
            None => break (landmarks, all),
            Some((frame, visible)) => {
                attempt += 1;
                if attempt >= MAX_CLOUD_ATTEMPTS {
                    return Err(SimError::NoVisibleLandmarks { frame, visible });
                }
            }
        }
    };

    // the reported poses carry front-end error; observations use the true ones
    let mut pose_rng = stream_rng(seed, 4);
    let frames = frames_at
        .iter()
        .zip(poses)
        .zip(observations)
        .map(|((&k, (rotation, position)), observations)| {
            let mut rotation = rotation;
            let mut position = position;
            if rig.pose_rotation_noise > 0.0 || rig.pose_position_noise > 0.0 {
                rotation = rotation * exp_so3(&(gaussian3(&mut pose_rng) * rig.pose_rotation_noise));
                position += gaussian3(&mut pose_rng) * rig.pose_position_noise;
            }
            (k, rotation, position, observations)
        })
        .map(|(k, rotation, position, observations)| CameraFrame {
            pose: CameraPoseUpToScale { rotation, position, timestamp: states[k].timestamp + rig.time_offset },
            exposure_time: states[k].timestamp,
            imu_index: k,
            observations,
        })
        .collect();

    Ok(SyntheticDataset {
        states,
        biases,
        true_omega,
        true_accel,
        imu,
        frames,
        landmarks,
        truth: TruthRecord {
            extrinsics: ex,
            time_offset: rig.time_offset,
            bias: rig.bias,
            gravity: g,
            scale: 1.0,
        },
        noise: rig.noise,
        intrinsics: rig.intrinsics,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn landmark_cloud(rig: &RigConfig, seed: u64) -> Vec<Landmark> {
    let mut rng = stream_rng(seed, 2);
    let (lo, hi) = rig.landmark_height;
    (0..rig.landmark_count)
        .map(|id| {
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let z: f64 = rng.random_range(lo..hi);
            let rr = rig.landmark_radius;
            Landmark { id, position: Vec3::new(rr * phi.cos(), rr * phi.sin(), z) }
        })
        .collect()
}

fn observe(
    rig: &RigConfig,
    landmarks: &[Landmark],
    r_wc: &Rotation,
    p_wc: &Vec3,
    rng: &mut ChaCha8Rng,
) -> Vec<Observation> {
    let k = &rig.intrinsics;
    let r_cw = r_wc.transpose();
    let mut out = Vec::new();
    for lm in landmarks {
        if out.len() >= rig.max_features {
            break;
        }
        let pc = r_cw * (lm.position - p_wc);
        if pc.z < 0.1 {
            continue;
        }
        let Some(u) = k.project(&pc) else { continue };
        if !k.contains(&u) {
            continue;
        }
        let noisy = if rig.pixel_noise > 0.0 {
            u + Vec2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * rig.pixel_noise
        } else {
            u
        };
        if !k.contains(&noisy) {
            continue;
        }
        let landmark = if rig.wrong_association > 0.0 && rng.random::<f64>() < rig.wrong_association {
            rng.random_range(0..landmarks.len())
        } else {
            lm.id
        };
        out.push(Observation { landmark, pixel: noisy });
    }
    out
}

/// Divides every visual position by `scale`, as a monocular front-end would
/// report them.
pub fn to_up_to_scale(dataset: &SyntheticDataset, scale: f64) -> SyntheticDataset {
    let mut out = dataset.clone();
    for f in &mut out.frames {
        f.pose.position /= scale;
    }
    for lm in &mut out.landmarks {
        lm.position /= scale;
    }
    out.truth.scale = dataset.truth.scale * scale;
    out
}

/// Writes the IMU stream as `t,wx,wy,wz,ax,ay,az` lines.
pub fn write_imu<W: Write>(w: &mut W, samples: &[ImuSample]) -> io::Result<()> {
    for s in samples {
        writeln!(
            w,
            "{:.9},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            s.timestamp, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
        )?;
    }
    Ok(())
}

/// Writes camera frames as `t,px,py,pz,r00..r22,id:u:v,...` lines.
pub fn write_frames<W: Write>(w: &mut W, frames: &[CameraFrame]) -> io::Result<()> {
    for f in frames {
        let mut line = format!("{:.9}", f.pose.timestamp);
        for x in f.pose.position.iter() {
            write!(line, ",{x:.12e}").unwrap();
        }
        let m = f.pose.rotation.matrix();
        for i in 0..3 {
            for j in 0..3 {
                write!(line, ",{:.15e}", m[(i, j)]).unwrap();
            }
        }
        for o in &f.observations {
            write!(line, ",{}:{:.6}:{:.6}", o.landmark, o.pixel.x, o.pixel.y).unwrap();
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn parse_err(line: usize, what: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {what}"))
}

pub fn read_imu<R: BufRead>(r: R) -> io::Result<Vec<ImuSample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(i + 1, "bad number"))?;
        if v.len() != 7 {
            return Err(parse_err(i + 1, "expected 7 fields"));
        }
        out.push(ImuSample {
            timestamp: v[0],
            gyro: Vec3::new(v[1], v[2], v[3]),
            accel: Vec3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

/// Reads frames written by [`write_frames`]; exposure time and IMU index are
/// not part of the format and come back as the stamp and zero.
pub fn read_frames<R: BufRead>(r: R) -> io::Result<Vec<CameraFrame>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 13 {
            return Err(parse_err(i + 1, "expected at least 13 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| parse_err(i + 1, "bad number"));
        let t = num(fields[0])?;
        let position = Vec3::new(num(fields[1])?, num(fields[2])?, num(fields[3])?);
        let mut m = Mat3::zeros();
        for k in 0..9 {
            m[(k / 3, k % 3)] = num(fields[4 + k])?;
        }
        let rotation = Rotation::from_matrix(m).map_err(|_| parse_err(i + 1, "not a rotation"))?;
        let mut observations = Vec::new();
        for f in &fields[13..] {
            let parts: Vec<&str> = f.split(':').collect();
            if parts.len() != 3 {
                return Err(parse_err(i + 1, "bad observation"));
            }
            let landmark = parts[0].parse().map_err(|_| parse_err(i + 1, "bad id"))?;
            observations.push(Observation { landmark, pixel: Vec2::new(num(parts[1])?, num(parts[2])?) });
        }
        out.push(CameraFrame {
            pose: CameraPoseUpToScale { rotation, position, timestamp: t },
            exposure_time: t,
            imu_index: 0,
            observations,
        });
    }
    Ok(out)
}
