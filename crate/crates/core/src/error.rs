use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("matrix is not skew-symmetric (|M + M^T| = {defect:e})")]
    NotSkewSymmetric { defect: f64 },
    #[error("matrix is not a rotation (defect {defect:e})")]
    NotARotation { defect: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImuError {
    #[error("empty IMU sample stream")]
    EmptyStream,
    #[error("IMU timestamps not strictly increasing at index {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("IMU stream does not cover [{start}, {end}]")]
    NotCovered { start: f64, end: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemporalError {
    #[error("camera poses {dt:e} s apart are too close to difference")]
    DegenerateInterval { dt: f64 },
    #[error("time offset {td} s exceeds the {max} s cap")]
    OffsetOutOfRange { td: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitError {
    #[error("need at least {required} keyframes, have {available}")]
    InsufficientKeyframes { required: usize, available: usize },
    #[error("solver stopped after {iterations} iterations without converging")]
    NotConverged { iterations: usize },
    #[error("linear system is rank deficient (conditioning {conditioning:e})")]
    RankDeficient { conditioning: f64 },
    #[error("gravity estimate is degenerate")]
    GravityDegenerate,
    #[error("initialization never converged ({executions} executions, {relaunches} relaunches)")]
    NeverConverged { executions: usize, relaunches: usize },
    #[error(transparent)]
    Imu(#[from] ImuError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("perturbation has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("optimizer did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("point behind camera (z = {z:e})")]
    PointBehindCamera { z: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("time {t} outside trajectory range [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
    #[error("frame {frame} sees only {visible} landmarks")]
    NoVisibleLandmarks { frame: usize, visible: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("need at least {required} poses, have {available}")]
    TooFewPoses { required: usize, available: usize },
    #[error("trajectory is degenerate (collinear)")]
    DegenerateTrajectory,
    #[error("all {0} runs failed")]
    AllRunsFailed(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
}

/// Any failure of a full simulate-initialize-refine-evaluate run.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
