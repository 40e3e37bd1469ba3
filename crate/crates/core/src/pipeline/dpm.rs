//! Dynamic projection run along a trajectory.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    checker_content, frame_seed, generate_projection, mean_std, observe, probe_misalignment, Controller,
    IntrinsicsPolicy, PipelineError, Rig,
};
use crate::imaging::{
    render_external, render_projection_on_surface, ExternalCamera, Image, SceneTextures, SurfaceIrradiance,
};
use crate::optics::{make_disk_psf, wiener_precompensate, Channel};
use crate::scene::{zone_color_saturating, Trajectory, ZoneColor};
use crate::vision::{detect_markers, DetectorMode};

/// Per-frame metrics. Lost frames leave the estimate and projection fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub time_s: f64,
    pub true_distance_mm: f64,
    pub estimated_distance_mm: Option<f64>,
    pub filtered_distance_mm: Option<f64>,
    /// Power the frame was captured at.
    pub capture_power_d: f64,
    /// Power commanded from this frame, used for its projection.
    pub power_d: f64,
    pub drive_current_ma: f64,
    pub clamped: bool,
    pub target_lost: bool,
    pub blur_ir_px: f64,
    pub blur_vis_px: f64,
    pub zone: Option<ZoneColor>,
    pub misalignment_mean_mm: Option<f64>,
    pub misalignment_max_mm: Option<f64>,
    pub pose_error_mm: Option<f64>,
    pub pose_error_deg: Option<f64>,
}

/// Wall-clock milliseconds per stage. Kept apart from [`FrameRecord`] so the
/// metrics file stays reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame_index: usize,
    pub capture_ms: f64,
    pub detect_ms: f64,
    pub control_ms: f64,
    pub projection_ms: f64,
    pub wiener_ms: f64,
    pub surface_ms: f64,
    pub external_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingSummary {
    pub mean: FrameTiming,
    pub max_total_ms: f64,
}

impl TimingSummary {
    pub fn of(timings: &[FrameTiming]) -> Self {
        let n = timings.len().max(1) as f64;
        let mut m = FrameTiming::default();
        let mut max_total: f64 = 0.0;
        for t in timings {
            m.capture_ms += t.capture_ms / n;
            m.detect_ms += t.detect_ms / n;
            m.control_ms += t.control_ms / n;
            m.projection_ms += t.projection_ms / n;
            m.wiener_ms += t.wiener_ms / n;
            m.surface_ms += t.surface_ms / n;
            m.external_ms += t.external_ms / n;
            m.total_ms += t.total_ms / n;
            max_total = max_total.max(t.total_ms);
        }
        Self { mean: m, max_total_ms: max_total }
    }
}

/// Images of one frame, handed to the caller's sink.
#[derive(Debug, Clone)]
pub struct FrameImages {
    pub capture: Option<Image>,
    /// Precompensated device image; absent on lost frames.
    pub projection: Option<Image>,
    pub external: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpmRun {
    pub records: Vec<FrameRecord>,
    pub timings: Vec<FrameTiming>,
}

impl DpmRun {
    pub fn lost_fraction(&self) -> f64 {
        self.records.iter().filter(|r| r.target_lost).count() as f64 / self.records.len().max(1) as f64
    }
}

/// Frame indices where the projected zone color changes, with old and new colors.
pub fn zone_transitions(records: &[FrameRecord]) -> Vec<(usize, ZoneColor, ZoneColor)> {
    let mut out = Vec::new();
    let mut prev: Option<ZoneColor> = None;
    for r in records {
        if let Some(z) = r.zone {
            if let Some(p) = prev {
                if p != z {
                    out.push((r.frame_index, p, z));
                }
            }
            prev = Some(z);
        }
    }
    out
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// `frames` evenly spaced samples of the trajectory, each captured,
/// tracked, colored by zone, precompensated and cast onto the target.
pub fn run_dpm<F>(
    rig: &Rig,
    scene: &SceneTextures,
    trajectory: &Trajectory,
    frames: usize,
    mut sink: F,
) -> Result<DpmRun, PipelineError>
where
    F: FnMut(usize, &FrameImages) -> Result<(), PipelineError>,
{
    rig.settings.validate()?;
    if frames < 2 {
        return Err(PipelineError::Config("a projection run needs at least two frames".into()));
    }
    let dev = &rig.device;
    let target = scene.target();
    let ctl = Controller {
        policy: IntrinsicsPolicy::Adaptive(rig.settings.interpolation),
        alpha: rig.settings.ema_alpha,
        ..Controller::new(&rig.profile, target, &dev.etl)
    };
    let content = checker_content(target, 2.0);
    let ext = ExternalCamera::evaluation_default();
    let (t0, t1) = (trajectory.start(), trajectory.end());
    let mut state = ctl.initial_state();
    let mut records = Vec::with_capacity(frames);
    let mut timings = Vec::with_capacity(frames);
    for k in 0..frames {
        let start = Instant::now();
        let mut tm = FrameTiming { frame_index: k, ..FrameTiming::default() };
        let t = t0 + (t1 - t0) * k as f64 / (frames - 1) as f64;
        let true_pose = trajectory.sample(t)?;
        let z = true_pose.translation.z;
        let capture_power = state.power(&dev.etl)?;

        let s = Instant::now();
        let seed = frame_seed(rig.settings.seed, u64::MAX, k as u64);
        let (capture, detections) = match rig.settings.detector {
            DetectorMode::Image => {
                let img = dev.capture(scene, &true_pose, capture_power, seed)?;
                tm.capture_ms = ms(s);
                let s = Instant::now();
                let d = detect_markers(&img);
                tm.detect_ms = ms(s);
                (Some(img), d)
            }
            DetectorMode::Oracle => {
                let o = observe(dev, scene, &rig.settings, &true_pose, capture_power, seed)?;
                tm.detect_ms = ms(s);
                (None, o.detections)
            }
        };

        let s = Instant::now();
        let step = ctl.step_detections(&state, &detections);
        tm.control_ms = ms(s);
        let blur_ir = dev.etl.blur_radius(z, capture_power, Channel::Ir)?;

        let (record, images) = match step {
            Ok(out) => {
                state = out.state;
                let power = out.power;
                let zone = zone_color_saturating(out.measured_distance);
                let s = Instant::now();
                let raw = generate_projection(
                    &out.pose.pose,
                    &state.active_intrinsics,
                    target,
                    &content,
                    zone,
                    dev.raster(),
                    rig.settings.projection_supersample,
                );
                tm.projection_ms = ms(s);
                let s = Instant::now();
                let expected_blur = dev.etl.blur_radius(out.measured_distance, power, Channel::Visible)?;
                let projection = wiener_precompensate(&raw, &make_disk_psf(expected_blur), rig.settings.wiener_nsr);
                tm.wiener_ms = ms(s);
                let s = Instant::now();
                let irr = render_projection_on_surface(
                    &projection,
                    scene,
                    &true_pose,
                    &dev.etl,
                    &dev.intrinsics,
                    power,
                    dev.raster(),
                )?;
                tm.surface_ms = ms(s);
                let s = Instant::now();
                let external = render_external(&ext, scene, &true_pose, &irr, rig.settings.ambient, 1);
                tm.external_ms = ms(s);
                let true_intr = dev.intrinsics_at_power(power)?;
                let mis = probe_misalignment(target, &true_pose, &true_intr, &out.pose.pose, &state.active_intrinsics);
                let (mis_mean, mis_max) = if mis.is_empty() {
                    (None, None)
                } else {
                    (Some(mean_std(&mis).0), Some(mis.iter().copied().fold(0.0, f64::max)))
                };
                let (dt, dr) = out.pose.pose.difference(&true_pose);
                let rec = FrameRecord {
                    frame_index: k,
                    time_s: t,
                    true_distance_mm: z,
                    estimated_distance_mm: Some(out.measured_distance),
                    filtered_distance_mm: state.filtered_distance,
                    capture_power_d: capture_power,
                    power_d: power,
                    drive_current_ma: state.drive_current,
                    clamped: out.clamped,
                    target_lost: false,
                    blur_ir_px: blur_ir,
                    blur_vis_px: dev.etl.blur_radius(z, power, Channel::Visible)?,
                    zone: Some(zone),
                    misalignment_mean_mm: mis_mean,
                    misalignment_max_mm: mis_max,
                    pose_error_mm: Some(dt),
                    pose_error_deg: Some(dr.to_degrees()),
                };
                (rec, FrameImages { capture, projection: Some(projection), external })
            }
            Err(PipelineError::TargetLost(_)) => {
                let s = Instant::now();
                let irr = SurfaceIrradiance::zero(scene.faces().len());
                let external = render_external(&ext, scene, &true_pose, &irr, rig.settings.ambient, 1);
                tm.external_ms = ms(s);
                let rec = FrameRecord {
                    frame_index: k,
                    time_s: t,
                    true_distance_mm: z,
                    estimated_distance_mm: None,
                    filtered_distance_mm: state.filtered_distance,
                    capture_power_d: capture_power,
                    power_d: capture_power,
                    drive_current_ma: state.drive_current,
                    clamped: false,
                    target_lost: true,
                    blur_ir_px: blur_ir,
                    blur_vis_px: dev.etl.blur_radius(z, capture_power, Channel::Visible)?,
                    zone: None,
                    misalignment_mean_mm: None,
                    misalignment_max_mm: None,
                    pose_error_mm: None,
                    pose_error_deg: None,
                };
                (rec, FrameImages { capture, projection: None, external })
            }
            Err(e) => return Err(e),
        };
        tm.total_ms = ms(start);
        sink(k, &images)?;
        records.push(record);
        timings.push(tm);
    }
    Ok(DpmRun { records, timings })
}
