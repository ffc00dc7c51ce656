//! Monte-Carlo sweeps over one IMU noise parameter and injected offsets.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::EvalError;
use crate::eval::{aggregate, Aggregate, MetricsRow};
use crate::imu::ImuBias;
use crate::pipeline::{run_pipeline, RunConfig};
use crate::sim::RigConfig;

/// The IMU parameter a sweep scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseAxis {
    GyroDensity,
    AccelDensity,
    GyroWalk,
    AccelWalk,
    GyroBias,
    AccelBias,
}

impl NoiseAxis {
    pub const ALL: [NoiseAxis; 6] = [
        NoiseAxis::GyroDensity,
        NoiseAxis::AccelDensity,
        NoiseAxis::GyroWalk,
        NoiseAxis::AccelWalk,
        NoiseAxis::GyroBias,
        NoiseAxis::AccelBias,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseAxis::GyroDensity => "sigma_g",
            NoiseAxis::AccelDensity => "sigma_a",
            NoiseAxis::GyroWalk => "sigma_bg",
            NoiseAxis::AccelWalk => "sigma_ba",
            NoiseAxis::GyroBias => "bias_g",
            NoiseAxis::AccelBias => "bias_a",
        }
    }
}

impl fmt::Display for NoiseAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoiseAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown axis `{s}` (expected one of sigma_g, sigma_a, sigma_bg, sigma_ba, bias_g, bias_a)"))
    }
}

/// What the parameters off the swept axis are set to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// All IMU noise, biases and visual pose noise zeroed.
    Zero,
    /// Everything at the configured nominal values.
    Nominal,
}

impl FromStr for Baseline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(Baseline::Zero),
            "nominal" => Ok(Baseline::Nominal),
            _ => Err(format!("unknown baseline `{s}` (expected zero or nominal)")),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Zero => "zero",
            Baseline::Nominal => "nominal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: NoiseAxis,
    /// Multiples of the configured nominal value of the axis.
    pub multipliers: Vec<f64>,
    pub offsets_ms: Vec<f64>,
    pub seeds: usize,
    pub seed_base: u64,
    pub baseline: Baseline,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: NoiseAxis::GyroDensity,
            multipliers: (0..=8).map(f64::from).collect(),
            offsets_ms: vec![0.0, 50.0, 100.0],
            seeds: 25,
            seed_base: 0,
            baseline: Baseline::Zero,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.multipliers.iter().any(|m| !(*m >= 0.0)) {
            return Err("multipliers must be non-negative".into());
        }
        if self.seeds == 0 {
            return Err("need at least one seed per cell".into());
        }
        if self.multipliers.is_empty() || self.offsets_ms.is_empty() {
            return Err("need at least one multiplier and one offset".into());
        }
        Ok(())
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub axis: NoiseAxis,
    pub multiplier: f64,
    pub offset_ms: f64,
    pub baseline: Baseline,
}

/// Rig for a cell: the swept parameter at `multiplier` times its nominal
/// value in `nominal`, the rest per the baseline.
pub fn cell_rig(nominal: &RigConfig, cell: &Cell) -> RigConfig {
    let mut rig = nominal.clone();
    if cell.baseline == Baseline::Zero {
        rig.noise.gyro_density = 0.0;
        rig.noise.accel_density = 0.0;
        rig.noise.gyro_walk = 0.0;
        rig.noise.accel_walk = 0.0;
        rig.bias = ImuBias::zero();
        rig.pose_rotation_noise = 0.0;
        rig.pose_position_noise = 0.0;
    }
    let m = cell.multiplier;
    match cell.axis {
        NoiseAxis::GyroDensity => rig.noise.gyro_density = nominal.noise.gyro_density * m,
        NoiseAxis::AccelDensity => rig.noise.accel_density = nominal.noise.accel_density * m,
        NoiseAxis::GyroWalk => rig.noise.gyro_walk = nominal.noise.gyro_walk * m,
        NoiseAxis::AccelWalk => rig.noise.accel_walk = nominal.noise.accel_walk * m,
        NoiseAxis::GyroBias => rig.bias.gyro = nominal.bias.gyro * m,
        NoiseAxis::AccelBias => rig.bias.accel = nominal.bias.accel * m,
    }
    rig.time_offset = cell.offset_ms * 1e-3;
    rig
}

/// One run of a cell; pipeline errors become failed rows.
pub fn run_cell(cfg: &RunConfig, cell: &Cell, seed: u64) -> MetricsRow {
    let cfg = RunConfig { rig: cell_rig(&cfg.rig, cell), ..cfg.clone() };
    match run_pipeline(&cfg, seed) {
        Ok(out) => out.final_metrics().clone(),
        Err(e) => MetricsRow::failed(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    /// Seed and metrics of every run.
    pub rows: Vec<(u64, MetricsRow)>,
    pub aggregate: Result<Aggregate, EvalError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn failed_runs(&self) -> usize {
        self.cells.iter().flat_map(|c| &c.rows).filter(|(_, r)| !r.is_ok()).count()
    }
}

pub fn cells(spec: &SweepSpec) -> Vec<Cell> {
    let mut out = Vec::with_capacity(spec.multipliers.len() * spec.offsets_ms.len());
    for &multiplier in &spec.multipliers {
        for &offset_ms in &spec.offsets_ms {
            out.push(Cell { axis: spec.axis, multiplier, offset_ms, baseline: spec.baseline });
        }
    }
    out
}

/// Runs every (cell, seed) pair on the current rayon pool. Seeds are shared
/// across cells so cells differ only by their parameters.
pub fn run_sweep(cfg: &RunConfig, spec: &SweepSpec) -> SweepResult {
    let grid = cells(spec);
    let jobs: Vec<(usize, u64)> =
        (0..grid.len()).flat_map(|c| (0..spec.seeds as u64).map(move |s| (c, s))).collect();
    let rows: Vec<MetricsRow> = jobs
        .par_iter()
        .map(|&(c, s)| run_cell(cfg, &grid[c], spec.seed_base.wrapping_add(s)))
        .collect();
    let mut it = rows.into_iter();
    let cells = grid
        .into_iter()
        .map(|cell| {
            let rows: Vec<(u64, MetricsRow)> =
                (0..spec.seeds as u64).map(|s| (spec.seed_base.wrapping_add(s), it.next().expect("row"))).collect();
            let plain: Vec<MetricsRow> = rows.iter().map(|(_, r)| r.clone()).collect();
            CellResult { cell, aggregate: aggregate(&plain), rows }
        })
        .collect();
    SweepResult { spec: spec.clone(), cells }
}

/// Formats with 9 significant digits, switching to exponent form only for
/// very large or very small magnitudes.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return "nan".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Metric columns written to CSV; wall time goes to a separate file so the
/// main outputs stay byte-identical across runs.
const CSV_METRICS: [usize; 9] = [0, 1, 2, 3, 4, 5, 6, 7, 9];

fn metric_header() -> String {
    CSV_METRICS.iter().map(|&i| MetricsRow::HEADER[i]).collect::<Vec<_>>().join(",")
}

fn metric_values(row: &MetricsRow) -> String {
    let v = row.values();
    CSV_METRICS.iter().map(|&i| format_sig(v[i])).collect::<Vec<_>>().join(",")
}

/// One aggregated row per cell.
pub fn write_summary<W: Write>(w: &mut W, result: &SweepResult) -> io::Result<()> {
    writeln!(w, "axis,multiplier,offset_ms,successes,failures,{}", metric_header())?;
    for c in &result.cells {
        let head = format!("{},{},{}", c.cell.axis, format_sig(c.cell.multiplier), format_sig(c.cell.offset_ms));
        match &c.aggregate {
            Ok(a) => writeln!(w, "{head},{},{},{}", a.successes, a.failures, metric_values(&a.median))?,
            Err(_) => {
                let blanks = vec!["nan"; CSV_METRICS.len()].join(",");
                writeln!(w, "{head},0,{},{blanks}", c.rows.len())?
            }
        }
    }
    Ok(())
}

/// Every run, with failure reasons.
pub fn write_runs<W: Write>(w: &mut W, result: &SweepResult) -> io::Result<()> {
    writeln!(w, "axis,multiplier,offset_ms,seed,status,{}", metric_header())?;
    for c in &result.cells {
        for (seed, r) in &c.rows {
            let status = match &r.failure {
                None => "ok".to_string(),
                Some(reason) => format!("failed: {}", reason.replace([',', '\n'], ";")),
            };
            writeln!(
                w,
                "{},{},{},{seed},{status},{}",
                c.cell.axis,
                format_sig(c.cell.multiplier),
                format_sig(c.cell.offset_ms),
                metric_values(r)
            )?;
        }
    }
    Ok(())
}

pub fn write_timing<W: Write>(w: &mut W, result: &SweepResult) -> io::Result<()> {
    writeln!(w, "multiplier,offset_ms,seed,wall_time_s")?;
    for c in &result.cells {
        for (seed, r) in &c.rows {
            writeln!(w, "{},{},{seed},{}", format_sig(c.cell.multiplier), format_sig(c.cell.offset_ms), format_sig(r.wall_time_s))?;
        }
    }
    Ok(())
}

/// Largest ratio between offset-cell medians at equal multiplier, for the
/// metric at `column`, with values floored at `resolution`.
pub fn offset_spread(result: &SweepResult, column: usize, resolution: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &m in &result.spec.multipliers {
        let vals: Vec<f64> = result
            .cells
            .iter()
            .filter(|c| c.cell.multiplier == m)
            .filter_map(|c| c.aggregate.as_ref().ok())
            .map(|a| a.median.values()[column].max(resolution))
            .collect();
        if vals.len() < 2 {
            continue;
        }
        let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
        let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
        out.push((m, hi / lo));
    }
    out
}
