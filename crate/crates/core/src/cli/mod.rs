//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error (nothing written),
//! 3 calibration or run failure, 4 projection run that lost the target in
//! more than 10% of frames.

mod config;

pub use config::{DeviceSection, RunConfig};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibration::{load_profile, save_profile, sweep_calibrate, CalibrationError, IntrinsicProfile};
use crate::geometry::{Pose, Vec3};
use crate::imaging::SceneTextures;
use crate::optics::{make_disk_psf, Channel};
use crate::pipeline::{
    run_alignment_eval, run_dpm, write_eval_csv, write_metrics, write_timings, zone_transitions, EvalMode, FrameImages,
    PipelineError, Rig, TimingSummary,
};
use crate::scene::{SceneDescription, Target, Trajectory, TrajectorySpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;
pub const EXIT_TARGET_LOST: i32 = 4;

/// Share of lost frames above which a projection run exits with code 4.
pub const MAX_LOST_FRACTION: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "procams", version, about = "Coaxial projector-camera simulator with a tunable lens")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Ir,
    Visible,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Ir => Channel::Ir,
            ChannelArg::Visible => Channel::Visible,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate at every configured station and write the intrinsic profile.
    Calibrate {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Profile JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Project reference dots at each station and measure their misalignment.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Profile written by `calibrate`.
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Distance (mm) whose intrinsics stay frozen in fixed mode.
        #[arg(long, required_if_eq("mode", "fixed"))]
        fixed_at: Option<f64>,
        /// CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dynamic projection along a trajectory.
    Dpm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        /// Keyframe list (JSON array); defaults to the scene's trajectory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Output directory for metrics, timings, manifest and frames.
        #[arg(long)]
        out: PathBuf,
        /// Write images of every Nth frame; 0 writes none.
        #[arg(long, default_value_t = 10)]
        frame_stride: usize,
    },
    /// Render one IR capture of the scene target facing the device.
    Render {
        #[arg(long)]
        config: PathBuf,
        /// Target distance, mm.
        #[arg(long)]
        z: f64,
        /// ETL power, D. Defaults to the power that focuses at `z`.
        #[arg(long, allow_negative_numbers = true)]
        power: Option<f64>,
        /// Rotation about the vertical axis, degrees.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw_deg: f64,
        /// PGM to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the defocus kernel for an object distance and ETL power.
    Psf {
        /// Optional run configuration for the lens constants.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        z: f64,
        #[arg(long, allow_negative_numbers = true)]
        power: f64,
        #[arg(long, value_enum, default_value_t = ChannelArg::Ir)]
        channel: ChannelArg,
    },
}

/// Error carrying its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(m: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: m.to_string() }
    }
    fn failure(m: impl std::fmt::Display) -> Self {
        Self { code: EXIT_FAILURE, message: m.to_string() }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Self::config(e),
            _ => Self::failure(e),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cmd: &Command) -> Result<i32, CliError> {
    match cmd {
        Command::Calibrate { config, out } => cmd_calibrate(config, out),
        Command::Eval { config, profile, mode, fixed_at, out } => cmd_eval(config, profile, *mode, *fixed_at, out),
        Command::Dpm { config, profile, trajectory, out, frame_stride } => {
            cmd_dpm(config, profile, trajectory.as_deref(), out, *frame_stride)
        }
        Command::Render { config, z, power, yaw_deg, out } => cmd_render(config, *z, *power, *yaw_deg, out),
        Command::Psf { config, z, power, channel } => cmd_psf(config.as_deref(), *z, *power, (*channel).into()),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(CliError::config)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::config(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn calibration_kind(e: &CalibrationError) -> &'static str {
    match e {
        CalibrationError::InsufficientViews(_) => "InsufficientViews",
        CalibrationError::DegenerateMotion => "DegenerateMotion",
        CalibrationError::NonPositiveDefinite => "NonPositiveDefinite",
        CalibrationError::BehindCamera => "BehindCamera",
        CalibrationError::TooFewCorrespondences { .. } => "TooFewCorrespondences",
        CalibrationError::DegenerateView => "DegenerateView",
        CalibrationError::InsufficientStations(_) => "InsufficientStations",
        CalibrationError::Station { source, .. } => calibration_kind(source),
        CalibrationError::DetectionFailed { .. } => "DetectionFailed",
        CalibrationError::InvalidSweep(_) => "InvalidSweep",
        CalibrationError::Io(_) => "Io",
        CalibrationError::Schema(_) => "Schema",
        CalibrationError::Geometry(_) => "Geometry",
        CalibrationError::Lm(_) => "Lm",
    }
}

pub fn cmd_calibrate(config: &Path, out: &Path) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    ensure_parent(out)?;
    let profile = sweep_calibrate(&cfg.sweep_setup(), &cfg.stations_mm)
        .map_err(|e| CliError::failure(format!("calibration failed: {} ({e})", calibration_kind(&e))))?;
    save_profile(&profile, out).map_err(CliError::failure)?;
    let etl = cfg.etl;
    println!("{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "z_mm", "power_d", "fx", "fy", "cx", "rms_px");
    for e in profile.entries.iter().rev() {
        let z = etl.focus_distance(e.power_d, Channel::Ir).unwrap_or(f64::NAN);
        println!("{z:>10.1} {:>10.4} {:>10.3} {:>10.3} {:>10.3} {:>10.4}", e.power_d, e.fx, e.fy, e.cx, e.rms_px);
    }
    println!("wrote {} ({} stations)", out.display(), profile.entries.len());
    Ok(EXIT_OK)
}

fn load_rig(cfg: &RunConfig, profile_path: &Path) -> Result<Rig, CliError> {
    let profile: IntrinsicProfile = load_profile(profile_path).map_err(CliError::config)?;
    let device = cfg.device();
    if (profile.device.width, profile.device.height) != device.raster() {
        return Err(CliError::config(format!(
            "profile is for a {}×{} raster, config has {}×{}",
            profile.device.width, profile.device.height, device.width, device.height
        )));
    }
    if profile.etl_hash.as_deref().is_some_and(|h| h != device.etl.config_hash()) {
        eprintln!("warning: profile was calibrated with different lens constants");
    }
    Ok(Rig { device, profile, settings: cfg.loop_settings() })
}

fn eval_target(cfg: &RunConfig) -> Result<Target, CliError> {
    let desc = cfg.scene_description().map_err(CliError::config)?.unwrap_or_else(SceneDescription::evaluation_default);
    let target = desc.build_target().map_err(CliError::config)?;
    if target.reference_dots().is_empty() {
        return Err(CliError::config("evaluation scene has no reference dots"));
    }
    Ok(target)
}

pub fn cmd_eval(
    config: &Path,
    profile: &Path,
    mode: ModeArg,
    fixed_at: Option<f64>,
    out: &Path,
) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let rig = load_rig(&cfg, profile)?;
    let target = eval_target(&cfg)?;
    let mode = match (mode, fixed_at) {
        (ModeArg::Adaptive, _) => EvalMode::Adaptive,
        (ModeArg::Fixed, Some(z)) if (crate::scene::ZONE_MIN_MM..=crate::scene::ZONE_MAX_MM).contains(&z) => {
            EvalMode::Fixed { at_mm: z }
        }
        (ModeArg::Fixed, Some(z)) => return Err(CliError::config(format!("--fixed-at {z} outside [70, 250]"))),
        (ModeArg::Fixed, None) => return Err(CliError::config("--mode fixed requires --fixed-at")),
    };
    ensure_parent(out)?;
    let results = run_alignment_eval(&rig, &target, &cfg.stations_mm, cfg.eval_steps, mode)?;
    let rows: Vec<_> = results.iter().map(|r| r.row).collect();
    write_eval_csv(&rows, out)?;
    println!("{:>10} {:>10} {:>10} {:>10} {:>10}", "z_mm", "mean_mm", "std_mm", "blur_ir", "blur_vis");
    for r in &rows {
        println!(
            "{:>10.1} {:>10.4} {:>10.4} {:>10.3} {:>10.3}",
            r.distance_mm, r.mean_mm, r.std_mm, r.blur_ir_px, r.blur_vis_px
        );
    }
    let worst = rows.iter().map(|r| r.mean_mm).fold(0.0, f64::max);
    println!("worst station mean {worst:.4} mm; wrote {}", out.display());
    Ok(EXIT_OK)
}

/// Reads a keyframe list: a JSON array of `{time_s, translation_mm, axis_angle_rad}`.
pub fn load_trajectory(path: &Path) -> Result<Trajectory, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let keys: Vec<TrajectorySpec> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if keys.is_empty() {
        return Err(format!("{}: trajectory has no keyframes", path.display()));
    }
    let desc = SceneDescription { trajectory: keys, ..SceneDescription::dpm_default() };
    desc.build_trajectory().map_err(|e| e.to_string())?.ok_or_else(|| "trajectory has no keyframes".into())
}

#[derive(Serialize)]
struct Manifest<'a> {
    crate_version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    profile: String,
    trajectory: Option<String>,
    frames: usize,
    frame_stride: usize,
    lost_fraction: f64,
    transitions: Vec<(usize, &'static str, &'static str)>,
}

pub fn cmd_dpm(
    config: &Path,
    profile: &Path,
    trajectory: Option<&Path>,
    out: &Path,
    frame_stride: usize,
) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let rig = load_rig(&cfg, profile)?;
    let desc = cfg.scene_description().map_err(CliError::config)?.unwrap_or_else(SceneDescription::dpm_default);
    let target = desc.build_target().map_err(CliError::config)?;
    let traj = match trajectory {
        Some(p) => load_trajectory(p).map_err(CliError::config)?,
        None => match desc.build_trajectory().map_err(CliError::config)? {
            Some(t) => t,
            None => {
                SceneDescription::dpm_default().build_trajectory().map_err(CliError::config)?.expect("default keys")
            }
        },
    };
    if out.exists() && !out.is_dir() {
        return Err(CliError::config(format!("{} exists and is not a directory", out.display())));
    }

    let frames_dir = out.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| CliError::failure(format!("{}: {e}", frames_dir.display())))?;
    let scene = SceneTextures::new(&target);
    let save = |name: String, img: &crate::imaging::Image| {
        let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
        let p = frames_dir.join(format!("{name}.{ext}"));
        img.write_pnm(&p).map_err(|e| PipelineError::Io(format!("{}: {e}", p.display())))
    };
    let sink = |k: usize, imgs: &FrameImages| {
        if frame_stride == 0 || k % frame_stride != 0 {
            return Ok(());
        }
        if let Some(c) = &imgs.capture {
            save(format!("capture_{k:04}"), c)?;
        }
        if let Some(p) = &imgs.projection {
            save(format!("projection_{k:04}"), p)?;
        }
        save(format!("external_{k:04}"), &imgs.external)
    };
    let run = run_dpm(&rig, &scene, &traj, cfg.dpm_frames, sink)?;
    write_metrics(&run.records, &out.join("metrics.csv"))?;
    write_timings(&run.timings, &out.join("timings.csv"))?;

    let transitions = zone_transitions(&run.records);
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: &cfg,
        profile: profile.display().to_string(),
        trajectory: trajectory.map(|p| p.display().to_string()),
        frames: cfg.dpm_frames,
        frame_stride,
        lost_fraction: run.lost_fraction(),
        transitions: transitions.iter().map(|(k, a, b)| (*k, a.name(), b.name())).collect(),
    };
    let mp = out.join("manifest.json");
    std::fs::write(&mp, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| CliError::failure(format!("{}: {e}", mp.display())))?;

    for (k, a, b) in &transitions {
        let z = run.records[*k].true_distance_mm;
        println!("transition at frame {k}: {} -> {} (true distance {z:.1} mm)", a.name(), b.name());
    }
    println!("{} zone transitions", transitions.len());
    let t = TimingSummary::of(&run.timings);
    let m = t.mean;
    println!(
        "mean ms/frame: capture {:.1}, detect {:.1}, control {:.2}, projection {:.1}, wiener {:.1}, surface {:.1}, external {:.1}, total {:.1} (max {:.1})",
        m.capture_ms, m.detect_ms, m.control_ms, m.projection_ms, m.wiener_ms, m.surface_ms, m.external_ms, m.total_ms, t.max_total_ms
    );
    if m.total_ms > 1000.0 {
        eprintln!("warning: mean frame time {:.0} ms exceeds 1 s", m.total_ms);
    }
    let lost = run.lost_fraction();
    if lost > MAX_LOST_FRACTION {
        eprintln!("error: target lost in {:.1}% of frames", 100.0 * lost);
        return Ok(EXIT_TARGET_LOST);
    }
    Ok(EXIT_OK)
}

pub fn cmd_render(config: &Path, z: f64, power: Option<f64>, yaw_deg: f64, out: &Path) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let dev = cfg.device();
    let desc = cfg.scene_description().map_err(CliError::config)?.unwrap_or_else(SceneDescription::evaluation_default);
    let target = desc.build_target().map_err(CliError::config)?;
    if !(z > 0.0) {
        return Err(CliError::config("--z must be positive"));
    }
    let power = match power {
        Some(p) => p,
        None => dev.etl.power_for_focus(z).map_err(CliError::config)?.power,
    };
    ensure_parent(out)?;
    let pose = Pose::from_axis_angle(Vec3::new(0.0, yaw_deg.to_radians(), 0.0), Vec3::new(0.0, 0.0, z));
    let img = dev.capture(&SceneTextures::new(&target), &pose, power, cfg.seed).map_err(CliError::failure)?;
    img.write_pnm(out).map_err(CliError::failure)?;
    let blur = dev.etl.blur_radius(z, power, Channel::Ir).map_err(CliError::failure)?;
    println!("z {z} mm, power {power:.4} D, IR blur {blur:.3} px; wrote {}", out.display());
    Ok(EXIT_OK)
}

pub fn cmd_psf(config: Option<&Path>, z: f64, power: f64, channel: Channel) -> Result<i32, CliError> {
    let etl = match config {
        Some(p) => load_config(p)?.etl,
        None => crate::optics::EtlModel::default(),
    };
    let r = etl.blur_radius(z, power, channel).map_err(CliError::config)?;
    let psf = make_disk_psf(r);
    println!("radius {r:.4} px, {0}×{0} taps", psf.side());
    let h = psf.half() as isize;
    for dy in -h..=h {
        let row: Vec<String> = (-h..=h).map(|dx| format!("{:.5}", psf.at(dx, dy))).collect();
        println!("{}", row.join(" "));
    }
    Ok(EXIT_OK)
}
