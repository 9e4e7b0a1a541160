//! Command-line driver. Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use slam2d_core::evaluation::{ape, traj_stats, ApeOptions, DEFAULT_HZ, DEFAULT_MAX_DT};
use slam2d_core::mapping::{build_map, DEFAULT_OCCUPIED_THRESHOLD, DEFAULT_RESOLUTION};
use slam2d_core::pipeline::{run_offline_with, PipelineConfig};
use slam2d_core::simulator::{generate_dataset, Preset, SimConfig};

use crate::{config, formats, StdClock};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "slam2d", version, about = "Planar lidar pose-graph SLAM: simulate, run, map and evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scan log and its ground-truth trajectory.
    Sim(SimArgs),
    /// Run SLAM over a scan log and write the optimized trajectory.
    Run(RunArgs),
    /// Absolute pose error of an estimate against a reference, as JSON.
    Eval(EvalArgs),
    /// Rasterize scans along a trajectory into a PGM image.
    Map(MapArgs),
    /// Duration, distance and average speed of a trajectory, as JSON.
    Stats(StatsArgs),
    /// Print every configuration key with its default value.
    Config,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Built-in world and trajectory: square-loop, fast-short, aggressive-rotation, slow-long.
    #[arg(long, conflicts_with_all = ["world", "waypoints"], required_unless_present_all = ["world", "waypoints"])]
    preset: Option<String>,
    /// World file, one wall per line: `x1 y1 x2 y2`.
    #[arg(long, requires = "waypoints")]
    world: Option<PathBuf>,
    /// Waypoint file, one per line: `t x y theta`.
    #[arg(long, requires = "world")]
    waypoints: Option<PathBuf>,
    /// Simulator settings (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output scan log (JSON lines).
    #[arg(long)]
    scans: PathBuf,
    /// Output ground-truth trajectory.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Input scan log (JSON lines).
    #[arg(long)]
    scans: PathBuf,
    /// Output trajectory.
    #[arg(long)]
    out: PathBuf,
    /// Pipeline settings (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sliding-window length; overrides the config file.
    #[arg(long)]
    window: Option<usize>,
    /// Also write a PGM map built along the estimate.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Map cell size, meters.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: f64,
    /// Hits for a map cell to count as occupied.
    #[arg(long, default_value_t = DEFAULT_OCCUPIED_THRESHOLD)]
    threshold: u32,
    /// Write the final factor graph as an edge list.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Reference (ground-truth) trajectory.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Estimated trajectory.
    #[arg(long)]
    est: PathBuf,
    /// Skip the rigid alignment of the estimate onto the reference.
    #[arg(long)]
    no_align: bool,
    /// Rate both trajectories are downsampled to, Hz.
    #[arg(long, default_value_t = DEFAULT_HZ)]
    hz: f64,
    /// Largest timestamp difference for a pose pair, seconds.
    #[arg(long, default_value_t = DEFAULT_MAX_DT)]
    max_dt: f64,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long)]
    scans: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    /// Output PGM image.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: f64,
    #[arg(long, default_value_t = DEFAULT_OCCUPIED_THRESHOLD)]
    threshold: u32,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    traj: PathBuf,
}

#[derive(Serialize)]
struct ApeReport {
    rmse: f64,
    mean: f64,
    median: f64,
    max: f64,
    num_pairs: usize,
}

#[derive(Serialize)]
struct StatsReport {
    duration: f64,
    total_distance: f64,
    avg_velocity: f64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_DATA
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Sim(a) => sim(a),
        Command::Run(a) => run_slam(a),
        Command::Eval(a) => eval(a, out),
        Command::Map(a) => map(a),
        Command::Stats(a) => stats(a, out),
        Command::Config => {
            writeln!(out, "# pipeline")?;
            write!(out, "{}", config::format_pipeline(&PipelineConfig::default()))?;
            writeln!(out, "# simulator")?;
            write!(out, "{}", config::format_sim(&SimConfig::default()))?;
            Ok(())
        }
    }
}

fn sim(a: SimArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => config::load_sim(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let (world, waypoints) = match (&a.preset, &a.world, &a.waypoints) {
        (Some(name), _, _) => {
            let p = Preset::from_name(name).ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                anyhow!("unknown preset {name:?} (expected one of {})", names.join(", "))
            })?;
            (p.world(), p.waypoints())
        }
        (None, Some(w), Some(wp)) => (formats::load_world(w)?, formats::load_waypoints(wp)?),
        _ => bail!("need --preset or both --world and --waypoints"),
    };
    let (scans, truth) = generate_dataset(&world, &waypoints, &cfg)?;
    formats::save_scans(&a.scans, &scans)?;
    formats::save_trajectory(&a.truth, &truth)?;
    log::info!("simulated {} scans", scans.len());
    Ok(())
}

fn run_slam(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => config::load_pipeline(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = a.window {
        cfg.window = w;
    }
    let scans = formats::load_scans(&a.scans)?;
    let state = run_offline_with(&cfg, &scans, &StdClock::new(), |e| {
        log::debug!("t={} pose={}", e.t, e.pose);
    })?;
    let traj = state.trajectory();
    formats::save_trajectory(&a.out, &traj)?;
    let s = state.stats();
    log::info!(
        "{} scans accepted, {} skipped; {:.2} ms/scan, {:.2} ms/optimize",
        s.scans_accepted,
        s.scans_skipped,
        1e3 * s.process_seconds / s.scans_accepted.max(1) as f64,
        1e3 * s.optimize_seconds / s.optimize_calls.max(1) as f64,
    );
    if let Some(path) = &a.dump_graph {
        let mut text = String::new();
        state.graph().write_edge_list(&mut text).expect("writing to a string");
        formats::write_bytes(path, text.as_bytes())?;
    }
    if let Some(path) = &a.map {
        let grid = build_map(&traj, &scans, a.resolution).context("building map")?;
        formats::write_bytes(path, &grid.to_pgm(a.threshold))?;
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let reference = formats::load_trajectory(&a.reference)?;
    let est = formats::load_trajectory(&a.est)?;
    let opts = ApeOptions { align: !a.no_align, hz: a.hz, max_dt: a.max_dt };
    let r = ape(&reference, &est, &opts)?;
    let report = ApeReport { rmse: r.rmse, mean: r.mean, median: r.median, max: r.max, num_pairs: r.num_pairs };
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn map(a: MapArgs) -> Result<()> {
    let scans = formats::load_scans(&a.scans)?;
    let traj = formats::load_trajectory(&a.traj)?;
    let grid = build_map(&traj, &scans, a.resolution)?;
    formats::write_bytes(&a.out, &grid.to_pgm(a.threshold))?;
    Ok(())
}

fn stats(a: StatsArgs, out: &mut dyn Write) -> Result<()> {
    let s = traj_stats(&formats::load_trajectory(&a.traj)?)?;
    let report = StatsReport { duration: s.duration, total_distance: s.total_distance, avg_velocity: s.avg_velocity };
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
