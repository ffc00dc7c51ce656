//! Flat `key = value` configuration with dotted section names.
//!
//! Blank lines and `#` comments are ignored. Vectors are comma-separated.
//! Unknown or repeated keys are errors.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::ConfigError;
use crate::estimator::{ImuWeighting, RobustCost, WindowMode};
use crate::initializer::RotationWeighting;
use crate::lie::{Rotation, Vec3};
use crate::pipeline::RunConfig;
use crate::sweep::format_sig;

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;

/// One configurable value.
pub struct Field {
    pub key: &'static str,
    get: Getter,
    set: Setter,
}

trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

impl Value for f64 {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse::<f64>().map_err(|e| e.to_string()).and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err("must be finite".into())
            }
        })
    }
    fn show(&self) -> String {
        format_sig(*self)
    }
}

impl Value for usize {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e: std::num::ParseIntError| e.to_string())
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e: std::num::ParseIntError| e.to_string())
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err("expected true or false".into()),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for Vec<f64> {
    fn parse(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| f64::parse(p.trim())).collect()
    }
    fn show(&self) -> String {
        self.iter().map(|v| format_sig(*v)).collect::<Vec<_>>().join(", ")
    }
}

impl Value for Vec3 {
    fn parse(s: &str) -> Result<Self, String> {
        let v = Vec::<f64>::parse(s)?;
        if v.len() != 3 {
            return Err(format!("expected 3 values, got {}", v.len()));
        }
        Ok(Vec3::new(v[0], v[1], v[2]))
    }
    fn show(&self) -> String {
        vec![self.x, self.y, self.z].show()
    }
}

impl Value for (f64, f64) {
    fn parse(s: &str) -> Result<Self, String> {
        let v = Vec::<f64>::parse(s)?;
        if v.len() != 2 {
            return Err(format!("expected 2 values, got {}", v.len()));
        }
        Ok((v[0], v[1]))
    }
    fn show(&self) -> String {
        vec![self.0, self.1].show()
    }
}

macro_rules! simple {
    ($key:literal, $($path:ident).+ : $ty:ty) => {
        Field {
            key: $key,
            get: |c| Value::show(&c.$($path).+),
            set: |c, v| {
                c.$($path).+ = <$ty as Value>::parse(v)?;
                Ok(())
            },
        }
    };
}

/// Parses via `FromStr` and prints via `Display`.
macro_rules! textual {
    ($key:literal, $($path:ident).+) => {
        Field {
            key: $key,
            get: |c| c.$($path).+.to_string(),
            set: |c, v| {
                c.$($path).+ = v.parse()?;
                Ok(())
            },
        }
    };
}

fn huber_get(r: &RobustCost) -> String {
    match r {
        RobustCost::Huber { threshold } => format_sig(*threshold),
        RobustCost::None => "0".into(),
    }
}

fn huber_set(v: &str) -> Result<RobustCost, String> {
    let t = f64::parse(v)?;
    if t < 0.0 {
        return Err("threshold must be non-negative (0 disables)".into());
    }
    Ok(if t == 0.0 { RobustCost::None } else { RobustCost::huber(t) })
}

/// Every configurable key with its accessors.
pub fn fields() -> Vec<Field> {
    vec![
        simple!("trajectory.radius", trajectory.radius: f64),
        simple!("trajectory.angular_rate", trajectory.angular_rate: f64),
        simple!("trajectory.vertical_amplitude", trajectory.vertical_amplitude: f64),
        simple!("trajectory.vertical_frequency", trajectory.vertical_frequency: f64),
        simple!("trajectory.duration", trajectory.duration: f64),
        simple!("trajectory.roll_amplitude", trajectory.roll_amplitude: f64),
        simple!("trajectory.roll_frequency", trajectory.roll_frequency: f64),
        Field {
            key: "rig.r_bc_ypr_deg",
            get: |c| c.rig.extrinsics.r_bc.to_euler_ypr().map(f64::to_degrees).show(),
            set: |c, v| {
                let a = Vec3::parse(v)?.map(f64::to_radians);
                c.rig.extrinsics.r_bc = Rotation::from_euler_ypr(a.x, a.y, a.z);
                Ok(())
            },
        },
        simple!("rig.p_bc", rig.extrinsics.p_bc: Vec3),
        simple!("rig.time_offset", rig.time_offset: f64),
        simple!("rig.camera_rate", rig.camera_rate: f64),
        simple!("rig.max_features", rig.max_features: usize),
        simple!("rig.pixel_noise", rig.pixel_noise: f64),
        simple!("rig.wrong_association", rig.wrong_association: f64),
        Field {
            key: "rig.pose_rotation_noise_deg",
            get: |c| format_sig(c.rig.pose_rotation_noise.to_degrees()),
            set: |c, v| {
                c.rig.pose_rotation_noise = f64::parse(v)?.to_radians();
                Ok(())
            },
        },
        simple!("rig.pose_position_noise", rig.pose_position_noise: f64),
        simple!("rig.landmark_count", rig.landmark_count: usize),
        simple!("rig.landmark_radius", rig.landmark_radius: f64),
        simple!("rig.landmark_height", rig.landmark_height: (f64, f64)),
        simple!("imu.rate", rig.noise.rate: f64),
        simple!("imu.sigma_g", rig.noise.gyro_density: f64),
        simple!("imu.sigma_a", rig.noise.accel_density: f64),
        simple!("imu.sigma_bg", rig.noise.gyro_walk: f64),
        simple!("imu.sigma_ba", rig.noise.accel_walk: f64),
        simple!("imu.bias_g", rig.bias.gyro: Vec3),
        simple!("imu.bias_a", rig.bias.accel: Vec3),
        simple!("camera.fx", rig.intrinsics.fx: f64),
        simple!("camera.fy", rig.intrinsics.fy: f64),
        simple!("camera.cx", rig.intrinsics.cx: f64),
        simple!("camera.cy", rig.intrinsics.cy: f64),
        simple!("camera.width", rig.intrinsics.width: f64),
        simple!("camera.height", rig.intrinsics.height: f64),
        simple!("init.min_keyframes", init.min_keyframes: usize),
        simple!("init.keyframe_stride", init.keyframe_stride: usize),
        simple!("init.batch_rounds", init.batch_rounds: usize),
        simple!("init.strict", init.strict: bool),
        simple!("init.step1.max_iterations", init.step1.max_iterations: usize),
        simple!("init.step1.initial_lambda", init.step1.initial_lambda: f64),
        simple!("init.step1.relative_tolerance", init.step1.relative_tolerance: f64),
        simple!("init.step1.bias_rounds", init.step1.bias_rounds: usize),
        Field {
            key: "init.step1.weighting",
            get: |c| {
                match c.init.step1.weighting {
                    RotationWeighting::Preintegration => "preintegration",
                    RotationWeighting::Identity => "identity",
                }
                .into()
            },
            set: |c, v| {
                c.init.step1.weighting = match v {
                    "preintegration" => RotationWeighting::Preintegration,
                    "identity" => RotationWeighting::Identity,
                    _ => return Err("expected preintegration or identity".into()),
                };
                Ok(())
            },
        },
        simple!("init.linear.robust", init.linear.robust: bool),
        simple!("init.linear.reweight_passes", init.linear.reweight_passes: usize),
        simple!("init.linear.huber_k", init.linear.huber_k: f64),
        simple!("init.linear.rank_tolerance", init.linear.rank_tolerance: f64),
        simple!("init.linear.gravity_passes", init.linear.gravity_passes: usize),
        simple!("init.linear.gravity_magnitude", init.linear.gravity_magnitude: f64),
        simple!("init.convergence.window", init.convergence.window: usize),
        simple!("init.convergence.rotation_deg", init.convergence.rotation_deg: f64),
        simple!("init.convergence.translation_m", init.convergence.translation_m: f64),
        simple!("init.convergence.offset_s", init.convergence.offset_s: f64),
        simple!("init.convergence.scale_rel", init.convergence.scale_rel: f64),
        Field {
            key: "optimizer.mode",
            get: |c| {
                match c.optimizer.mode {
                    WindowMode::Global => "global",
                    WindowMode::Local { .. } => "local",
                }
                .into()
            },
            set: |c, v| {
                let window = match c.optimizer.mode {
                    WindowMode::Local { window } => window,
                    WindowMode::Global => 10,
                };
                c.optimizer.mode = match v {
                    "global" => WindowMode::Global,
                    "local" => WindowMode::Local { window },
                    _ => return Err("expected global or local".into()),
                };
                Ok(())
            },
        },
        Field {
            key: "optimizer.window",
            get: |c| match c.optimizer.mode {
                WindowMode::Local { window } => window.to_string(),
                WindowMode::Global => "0".into(),
            },
            set: |c, v| {
                let w = usize::parse(v)?;
                if let WindowMode::Local { window } = &mut c.optimizer.mode {
                    *window = w;
                } else if w > 0 {
                    c.optimizer.mode = WindowMode::Local { window: w };
                }
                Ok(())
            },
        },
        simple!("optimizer.max_iterations", optimizer.max_iterations: usize),
        simple!("optimizer.initial_lambda", optimizer.initial_lambda: f64),
        simple!("optimizer.relative_tolerance", optimizer.relative_tolerance: f64),
        Field {
            key: "optimizer.pixel_huber",
            get: |c| huber_get(&c.optimizer.pixel_robust),
            set: |c, v| {
                c.optimizer.pixel_robust = huber_set(v)?;
                Ok(())
            },
        },
        Field {
            key: "optimizer.imu_huber",
            get: |c| huber_get(&c.optimizer.imu_robust),
            set: |c, v| {
                c.optimizer.imu_robust = huber_set(v)?;
                Ok(())
            },
        },
        Field {
            key: "optimizer.imu_weighting",
            get: |c| {
                match c.optimizer.imu_weighting {
                    ImuWeighting::Full => "full",
                    ImuWeighting::BlockDiagonal => "block",
                    ImuWeighting::Identity => "identity",
                }
                .into()
            },
            set: |c, v| {
                c.optimizer.imu_weighting = match v {
                    "full" => ImuWeighting::Full,
                    "block" => ImuWeighting::BlockDiagonal,
                    "identity" => ImuWeighting::Identity,
                    _ => return Err("expected full, block or identity".into()),
                };
                Ok(())
            },
        },
        simple!("optimizer.estimate_extrinsics", optimizer.estimate_extrinsics: bool),
        simple!("optimizer.estimate_offset", optimizer.estimate_offset: bool),
        simple!("problem.max_landmarks", problem.max_landmarks: usize),
        simple!("problem.min_observations", problem.min_observations: usize),
        simple!("problem.pixel_sigma", problem.pixel_sigma: f64),
        simple!("pipeline.scale", pipeline.scale: f64),
        simple!("pipeline.run_ba", pipeline.run_ba: bool),
        simple!("pipeline.online", pipeline.online: bool),
        simple!("pipeline.align_scale", pipeline.align_scale: bool),
        textual!("sweep.axis", sweep.axis),
        simple!("sweep.multipliers", sweep.multipliers: Vec<f64>),
        simple!("sweep.offsets_ms", sweep.offsets_ms: Vec<f64>),
        simple!("sweep.seeds", sweep.seeds: usize),
        simple!("sweep.seed_base", sweep.seed_base: u64),
        textual!("sweep.baseline", sweep.baseline),
    ]
}

/// Applies one `key = value` assignment.
pub fn set(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), String> {
    let field = fields().into_iter().find(|f| f.key == key).ok_or_else(|| format!("unknown key `{key}`"))?;
    (field.set)(cfg, value.trim())
}

/// Overlays the assignments in `text` onto `base`.
pub fn parse_onto(base: RunConfig, text: &str) -> Result<RunConfig, ConfigError> {
    let table = fields();
    let mut cfg = base;
    let mut seen = HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        let field = table
            .iter()
            .find(|f| f.key == key)
            .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Duplicate(key.to_string()));
        }
        (field.set)(&mut cfg, value).map_err(|reason| ConfigError::BadValue { line, key: key.to_string(), reason })?;
    }
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    parse_onto(RunConfig::default(), text)
}

/// Every key with its current value, one `key = value` per line.
pub fn render(cfg: &RunConfig) -> String {
    let mut out = String::new();
    for f in fields() {
        let _ = writeln!(out, "{} = {}", f.key, (f.get)(cfg));
    }
    out
}

/// Writes the code version, any run-specific entries and every configuration value.
pub fn write_manifest<W: std::io::Write>(w: &mut W, cfg: &RunConfig, extra: &[(&str, String)]) -> std::io::Result<()> {
    writeln!(w, "# vistac {}", crate::VERSION)?;
    for (k, v) in extra {
        writeln!(w, "# {k} = {v}")?;
    }
    w.write_all(render(cfg).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{Baseline, NoiseAxis};

    #[test]
    fn parses_dotted_keys_and_comments() {
        let cfg = parse("# nominal rig\nimu.sigma_g = 0.00034\n\nsweep.axis = bias_a  # trailing\nsweep.multipliers = 0, 2, 4\n").unwrap();
        assert_eq!(cfg.rig.noise.gyro_density, 0.00034);
        assert_eq!(cfg.sweep.axis, NoiseAxis::AccelBias);
        assert_eq!(cfg.sweep.multipliers, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(parse("bogus.key = 1"), Err(ConfigError::UnknownKey { line: 1, key: "bogus.key".into() }));
        assert_eq!(parse("imu.sigma_g 1"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(parse("imu.sigma_g = abc"), Err(ConfigError::BadValue { line: 1, .. })));
        assert_eq!(parse("init.strict = true\ninit.strict = false"), Err(ConfigError::Duplicate("init.strict".into())));
        assert!(matches!(parse("rig.p_bc = 1, 2"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn render_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.sweep.baseline = Baseline::Nominal;
        cfg.optimizer.mode = WindowMode::Local { window: 7 };
        cfg.optimizer.pixel_robust = RobustCost::None;
        cfg.rig.time_offset = 0.045;
        let text = render(&cfg);
        let back = parse(&text).unwrap();
        assert_eq!(render(&back), text);
        assert_eq!(back.sweep.baseline, Baseline::Nominal);
        assert_eq!(back.optimizer.mode, WindowMode::Local { window: 7 });
    }

    #[test]
    fn manifest_parses_back() {
        let mut buf = Vec::new();
        write_manifest(&mut buf, &RunConfig::default(), &[("seed", "3".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vistac "));
        assert_eq!(parse(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn keys_are_unique() {
        let keys: Vec<_> = fields().iter().map(|f| f.key).collect();
        let set: HashSet<_> = keys.iter().collect();
        assert_eq!(keys.len(), set.len());
    }
}
