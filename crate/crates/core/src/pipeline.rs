//! One end-to-end run: simulate, initialize, optionally refine, score.

use std::sync::Arc;
use std::time::Instant;

use crate::camera::Vec2;
use crate::error::PipelineError;
use crate::estimator::{optimize, problem_from_initialization, FullState, OptimizeConfig, OptimizeReport, ProblemConfig};
use crate::eval::{align_and_rmse, rotated_velocity_rmse, rotation_error_deg, MetricsRow};
use crate::imu::ImuBias;
use crate::initializer::{initialize_batch, run_initialization, InitPolicy, InitializationResult, KeyframeSet};
use crate::lie::Vec3;
use crate::sim::{synthesize, to_up_to_scale, RigConfig, SyntheticDataset, TrajectoryConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Factor the visual positions are divided by.
    pub scale: f64,
    /// Refine with global bundle adjustment after initialization.
    pub run_ba: bool,
    /// Feed keyframes one at a time with relaunches instead of one batch.
    pub online: bool,
    /// Include scale in the trajectory alignment.
    pub align_scale: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { scale: 2.0, run_ba: false, online: false, align_scale: true }
    }
}

/// Everything a run needs besides the seed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub trajectory: TrajectoryConfig,
    pub rig: RigConfig,
    pub init: InitPolicy,
    pub optimizer: OptimizeConfig,
    pub problem: ProblemConfig,
    pub pipeline: PipelineConfig,
    pub sweep: crate::sweep::SweepSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub state: FullState,
    pub report: OptimizeReport,
    pub metrics: MetricsRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub init: InitializationResult,
    pub init_metrics: MetricsRow,
    pub refined: Option<Refinement>,
}

impl RunOutcome {
    /// Metrics of the last stage that ran.
    pub fn final_metrics(&self) -> &MetricsRow {
        self.refined.as_ref().map(|r| &r.metrics).unwrap_or(&self.init_metrics)
    }
}

/// Synthesizes the dataset a run with `cfg` and `seed` operates on.
pub fn dataset(cfg: &RunConfig, seed: u64) -> Result<SyntheticDataset, PipelineError> {
    let d = synthesize(&cfg.trajectory, &cfg.rig, seed)?;
    Ok(to_up_to_scale(&d, cfg.pipeline.scale))
}

pub fn frame_observations(d: &SyntheticDataset) -> Vec<Vec<(usize, Vec2)>> {
    d.frames.iter().map(|f| f.observations.iter().map(|o| (o.landmark, o.pixel)).collect()).collect()
}

/// Initialization on a dataset, batch or online per the configuration.
pub fn initialize(cfg: &RunConfig, d: &SyntheticDataset) -> Result<InitializationResult, PipelineError> {
    let imu: Arc<[crate::imu::ImuSample]> = d.imu.clone().into();
    let poses = d.camera_poses();
    if cfg.pipeline.online {
        return Ok(run_initialization(&poses, imu, d.noise, &cfg.init)?);
    }
    let stride = cfg.init.keyframe_stride.max(1);
    let tagged = poses.into_iter().enumerate().step_by(stride).collect();
    let kfs = KeyframeSet::new(tagged, imu, d.noise, ImuBias::zero())?;
    Ok(initialize_batch(&kfs, &cfg.init)?)
}

struct Truth {
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
    bias: ImuBias,
}

fn truth_at(d: &SyntheticDataset, sources: &[usize]) -> Truth {
    let mut bias = ImuBias::zero();
    for &f in sources {
        let b = d.biases[d.frames[f].imu_index];
        bias.gyro += b.gyro;
        bias.accel += b.accel;
    }
    let n = sources.len().max(1) as f64;
    bias.gyro /= n;
    bias.accel /= n;
    Truth {
        positions: sources.iter().map(|&f| d.frame_state(f).position).collect(),
        velocities: sources.iter().map(|&f| d.frame_state(f).velocity).collect(),
        bias,
    }
}

/// Scores an initialization against the simulator's ground truth.
pub fn init_metrics(d: &SyntheticDataset, init: &InitializationResult, align_scale: bool) -> Result<MetricsRow, PipelineError> {
    let kfs = init.keyframes.keyframes();
    let sources: Vec<usize> = kfs.iter().map(|k| k.source).collect();
    let truth = truth_at(d, &sources);
    let ex = init.extrinsics;
    let s = init.step3.scale;
    let positions: Vec<Vec3> = kfs.iter().map(|k| s * k.pose.position + k.pose.rotation * ex.p_cb()).collect();
    let traj = align_and_rmse(&positions, &truth.positions, align_scale)?;
    let bias = init.bias();
    Ok(MetricsRow {
        rotation_deg: rotation_error_deg(&ex.r_bc, &d.truth.extrinsics.r_bc),
        translation_m: (ex.p_bc - d.truth.extrinsics.p_bc).norm(),
        offset_ms: (init.time_offset - d.truth.time_offset).abs() * 1e3,
        scale_rel: (s - d.truth.scale).abs() / d.truth.scale,
        gyro_bias: (bias.gyro - truth.bias.gyro).norm(),
        accel_bias: (bias.accel - truth.bias.accel).norm(),
        velocity_rmse: rotated_velocity_rmse(&init.velocities, &truth.velocities),
        trajectory_rmse: traj.rmse,
        wall_time_s: 0.0,
        keyframes: kfs.len(),
        failure: None,
    })
}

/// Scores a refined state. Its offset adds to the one the initializer removed.
pub fn refined_metrics(
    d: &SyntheticDataset,
    init: &InitializationResult,
    state: &FullState,
    align_scale: bool,
) -> Result<MetricsRow, PipelineError> {
    let sources: Vec<usize> = init.keyframes.keyframes().iter().map(|k| k.source).collect();
    let truth = truth_at(d, &sources);
    let positions: Vec<Vec3> = state.keyframes.iter().map(|k| k.position).collect();
    let velocities: Vec<Vec3> = state.keyframes.iter().map(|k| k.velocity).collect();
    let traj = align_and_rmse(&positions, &truth.positions, align_scale)?;
    let n = state.keyframes.len().max(1) as f64;
    let bg = state.keyframes.iter().map(|k| k.bias.gyro).sum::<Vec3>() / n;
    let ba = state.keyframes.iter().map(|k| k.bias.accel).sum::<Vec3>() / n;
    let ex = state.extrinsics;
    Ok(MetricsRow {
        rotation_deg: rotation_error_deg(&ex.r_bc, &d.truth.extrinsics.r_bc),
        translation_m: (ex.p_bc - d.truth.extrinsics.p_bc).norm(),
        offset_ms: (init.time_offset + state.td - d.truth.time_offset).abs() * 1e3,
        // metric positions need no rescaling when the scale is right
        scale_rel: (1.0 / traj.scale - 1.0).abs(),
        gyro_bias: (bg - truth.bias.gyro).norm(),
        accel_bias: (ba - truth.bias.accel).norm(),
        velocity_rmse: rotated_velocity_rmse(&velocities, &truth.velocities),
        trajectory_rmse: traj.rmse,
        wall_time_s: 0.0,
        keyframes: state.keyframes.len(),
        failure: None,
    })
}

/// Runs the pipeline on an existing dataset.
pub fn run_on(cfg: &RunConfig, d: &SyntheticDataset) -> Result<RunOutcome, PipelineError> {
    let start = Instant::now();
    let init = initialize(cfg, d)?;
    let mut init_metrics = init_metrics(d, &init, cfg.pipeline.align_scale)?;
    init_metrics.wall_time_s = start.elapsed().as_secs_f64();
    let refined = if cfg.pipeline.run_ba {
        let start = Instant::now();
        let (state, factors) = problem_from_initialization(&init, &frame_observations(d), &d.intrinsics, &cfg.problem)?;
        let (state, report) = optimize(&state, &factors, &cfg.optimizer)?;
        let mut metrics = refined_metrics(d, &init, &state, cfg.pipeline.align_scale)?;
        metrics.wall_time_s = start.elapsed().as_secs_f64();
        Some(Refinement { state, report, metrics })
    } else {
        None
    };
    Ok(RunOutcome { init, init_metrics, refined })
}

/// Simulates with `seed` and runs the pipeline.
pub fn run_pipeline(cfg: &RunConfig, seed: u64) -> Result<RunOutcome, PipelineError> {
    let d = dataset(cfg, seed)?;
    run_on(cfg, &d)
}
