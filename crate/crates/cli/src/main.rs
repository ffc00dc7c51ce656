use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vistac_core::config;
use vistac_core::diagnostics::jacobian_check;
use vistac_core::eval::MetricsRow;
use vistac_core::pipeline::{dataset, run_on, RunConfig};
use vistac_core::sim::{write_frames, write_imu};
use vistac_core::sweep::{format_sig, run_sweep, write_runs, write_summary, write_timing, NoiseAxis};

/// Camera-IMU spatial-temporal calibration on simulated data.
#[derive(Parser)]
#[command(name = "vistac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// File of `key = value` lines overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single override, repeatable: `--set imu.sigma_g=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a noise sweep and write CSV summaries.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Swept parameter.
        #[arg(long)]
        axis: Option<NoiseAxis>,
        /// Comma-separated multipliers of the nominal value.
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
        /// Comma-separated true clock offsets in milliseconds.
        #[arg(long = "offset-ms", value_delimiter = ',')]
        offsets_ms: Option<Vec<f64>>,
        #[arg(long)]
        seeds: Option<usize>,
        /// First seed; cell runs use consecutive seeds from here.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the pipeline once and print its metrics.
    Single {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// True clock offset in milliseconds.
        #[arg(long = "offset-ms")]
        offset_ms: Option<f64>,
        /// Refine with bundle adjustment.
        #[arg(long)]
        ba: bool,
        /// Online initialization with relaunches.
        #[arg(long)]
        online: bool,
        /// Also write metrics.csv and manifest.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a simulated dataset as CSV files.
    DumpDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "offset-ms")]
        offset_ms: Option<f64>,
    },
    /// Compare analytic Jacobians with central differences.
    JacobianCheck {
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Print every configuration key with its effective value.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            config::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
        config::set(&mut cfg, k.trim(), v).map_err(anyhow::Error::msg).with_context(|| format!("override `{o}`"))?;
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_manifest(dir: &Path, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut w = create(dir, "manifest.txt")?;
    config::write_manifest(&mut w, cfg, extra)?;
    w.flush()?;
    Ok(())
}

fn print_metrics(label: &str, m: &MetricsRow) {
    println!("[{label}]");
    for (name, v) in MetricsRow::HEADER.iter().zip(m.values()) {
        println!("  {name:<16} {}", format_sig(v));
    }
}

fn sweep(cfg: RunConfig, out: &Path) -> Result<ExitCode> {
    cfg.sweep.validate().map_err(anyhow::Error::msg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let result = run_sweep(&cfg, &cfg.sweep);
    for (name, writer) in [
        ("summary.csv", write_summary as fn(&mut BufWriter<File>, _) -> io::Result<()>),
        ("runs.csv", write_runs),
        ("timing.csv", write_timing),
    ] {
        let mut w = create(out, name)?;
        writer(&mut w, &result)?;
        w.flush()?;
    }
    write_manifest(out, &cfg, &[])?;
    let failed = result.failed_runs();
    let total: usize = result.cells.iter().map(|c| c.rows.len()).sum();
    eprintln!("{} cells, {total} runs, {failed} failed; results in {}", result.cells.len(), out.display());
    Ok(if failed > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn single(cfg: RunConfig, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let d = dataset(&cfg, seed)?;
    let outcome = run_on(&cfg, &d)?;
    let init = &outcome.init;
    println!(
        "keyframes {}  relaunches {}  converged {}",
        init.keyframes.len(),
        init.relaunch_count,
        init.converged
    );
    println!(
        "offset {} ms (truth {} ms)  scale {} (truth {})",
        format_sig(init.time_offset * 1e3),
        format_sig(d.truth.time_offset * 1e3),
        format_sig(init.step3.scale),
        format_sig(d.truth.scale)
    );
    print_metrics("initialization", &outcome.init_metrics);
    if let Some(r) = &outcome.refined {
        println!(
            "bundle adjustment: cost {} -> {} in {} iterations",
            format_sig(r.report.initial_cost),
            format_sig(r.report.final_cost),
            r.report.iterations
        );
        print_metrics("refined", &r.metrics);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut w = create(dir, "metrics.csv")?;
        writeln!(w, "stage,{}", MetricsRow::HEADER.join(","))?;
        let mut rows = vec![("init", &outcome.init_metrics)];
        if let Some(r) = &outcome.refined {
            rows.push(("refined", &r.metrics));
        }
        for (stage, m) in rows {
            let vals: Vec<String> = m.values().iter().map(|v| format_sig(*v)).collect();
            writeln!(w, "{stage},{}", vals.join(","))?;
        }
        w.flush()?;
        write_manifest(dir, &cfg, &[("seed", seed.to_string())])?;
    }
    Ok(if init.converged || !cfg.pipeline.online { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn dump_dataset(cfg: RunConfig, seed: u64, out: &Path) -> Result<ExitCode> {
    let d = dataset(&cfg, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = create(out, "imu.csv")?;
    write_imu(&mut w, &d.imu)?;
    w.flush()?;
    let mut w = create(out, "frames.csv")?;
    write_frames(&mut w, &d.frames)?;
    w.flush()?;
    let mut w = create(out, "truth.txt")?;
    let t = &d.truth;
    let ypr = t.extrinsics.r_bc.to_euler_ypr().map(f64::to_degrees);
    let vec = |v: &vistac_core::Vec3| format!("{}, {}, {}", format_sig(v.x), format_sig(v.y), format_sig(v.z));
    writeln!(w, "r_bc_ypr_deg = {}", vec(&ypr))?;
    writeln!(w, "p_bc = {}", vec(&t.extrinsics.p_bc))?;
    writeln!(w, "time_offset = {}", format_sig(t.time_offset))?;
    writeln!(w, "bias_g = {}", vec(&t.bias.gyro))?;
    writeln!(w, "bias_a = {}", vec(&t.bias.accel))?;
    writeln!(w, "gravity = {}", vec(&t.gravity))?;
    writeln!(w, "scale = {}", format_sig(t.scale))?;
    w.flush()?;
    write_manifest(out, &cfg, &[("seed", seed.to_string())])?;
    eprintln!("{} IMU samples, {} frames written to {}", d.imu.len(), d.frames.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep { common, out, axis, multipliers, offsets_ms, seeds, seed } => {
            let mut cfg = load_config(&common)?;
            if let Some(a) = axis {
                cfg.sweep.axis = a;
            }
            if let Some(m) = multipliers {
                cfg.sweep.multipliers = m;
            }
            if let Some(o) = offsets_ms {
                cfg.sweep.offsets_ms = o;
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            if let Some(s) = seed {
                cfg.sweep.seed_base = s;
            }
            sweep(cfg, &out)
        }
        Command::Single { common, seed, offset_ms, ba, online, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(ms) = offset_ms {
                cfg.rig.time_offset = ms * 1e-3;
            }
            cfg.pipeline.run_ba |= ba;
            cfg.pipeline.online |= online;
            single(cfg, seed, out.as_deref())
        }
        Command::DumpDataset { common, out, seed, offset_ms } => {
            let mut cfg = load_config(&common)?;
            if let Some(ms) = offset_ms {
                cfg.rig.time_offset = ms * 1e-3;
            }
            dump_dataset(cfg, seed, &out)
        }
        Command::JacobianCheck { points, seed, tolerance } => {
            if points == 0 {
                bail!("need at least one point");
            }
            let report = jacobian_check(points, seed);
            print!("{report}");
            let ok = report.passes(tolerance);
            println!("worst {:.3e} against tolerance {tolerance:e}: {}", report.worst(), if ok { "ok" } else { "FAILED" });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::ShowConfig { common } => {
            print!("{}", config::render(&load_config(&common)?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
