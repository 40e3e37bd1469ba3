//! Closed-loop focus control and the two experiments built on it: the
//! adaptive-versus-fixed alignment evaluation and the dynamic projection run.

mod dpm;
mod eval;
mod metrics;

pub use dpm::{run_dpm, zone_transitions, DpmRun, FrameImages, FrameRecord, FrameTiming, TimingSummary};
pub use eval::{run_alignment_eval, EvalMode, EvalRow, StationResult};
pub use metrics::{read_eval_csv, read_metrics, read_timings, write_eval_csv, write_metrics, write_timings};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{interpolate_with, InterpolationKind, IntrinsicProfile};
use crate::device::Device;
use crate::geometry::{project, GeometryError, Intrinsics, Pose, Vec2, Vec3};
use crate::imaging::{render_content, Image, RenderError, SceneTextures, Texture};
use crate::optics::{Channel, EtlModel, OpticsError};
use crate::scene::{SceneError, Target, ZoneColor};
use crate::vision::{
    detect_markers, estimate_target_distance, estimate_target_pose, oracle_detect, Detection, DetectorMode, NoiseModel,
    PoseEstimate,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("target lost: {0}")]
    TargetLost(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(String),
}

/// Loop parameters shared by the evaluation and the projection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopSettings {
    pub detector: DetectorMode,
    /// Corner noise of the oracle detector.
    pub noise: NoiseModel,
    pub interpolation: InterpolationKind,
    pub ema_alpha: f64,
    pub wiener_nsr: f64,
    /// Room light in the external view, as a fraction of full albedo.
    pub ambient: f64,
    pub projection_supersample: usize,
    pub seed: u64,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            detector: DetectorMode::Image,
            noise: NoiseModel::default(),
            interpolation: InterpolationKind::Linear,
            ema_alpha: 0.5,
            wiener_nsr: 0.01,
            ambient: 0.3,
            projection_supersample: 2,
            seed: 0,
        }
    }
}

impl LoopSettings {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(PipelineError::Config(format!("ema_alpha {} outside (0, 1]", self.ema_alpha)));
        }
        if !(self.wiener_nsr > 0.0) || !(self.ambient >= 0.0) || self.projection_supersample == 0 {
            return Err(PipelineError::Config("wiener_nsr, ambient or projection_supersample out of range".into()));
        }
        if !(self.noise.sigma0 >= 0.0 && self.noise.eta >= 0.0) {
            return Err(PipelineError::Config("oracle noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything the loop runs on: the simulated device, its calibrated
/// profile, and the loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub device: Device,
    pub profile: IntrinsicProfile,
    pub settings: LoopSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub drive_current: f64,
    pub active_intrinsics: Intrinsics,
    /// `None` until the first distance estimate.
    pub filtered_distance: Option<f64>,
    pub last_pose: Option<Pose>,
    pub frame_index: usize,
}

impl ControllerState {
    /// 0 mA with the intrinsics interpolated at the profile's median power.
    pub fn initial(profile: &IntrinsicProfile) -> Self {
        let (intr, _) = interpolate_with(profile, median_power(profile), InterpolationKind::Linear);
        Self { drive_current: 0.0, active_intrinsics: intr, filtered_distance: None, last_pose: None, frame_index: 0 }
    }

    pub fn power(&self, etl: &EtlModel) -> Result<f64, OpticsError> {
        etl.power_for_current(self.drive_current)
    }
}

fn median_power(profile: &IntrinsicProfile) -> f64 {
    let es = &profile.entries;
    let n = es.len();
    if n % 2 == 1 {
        es[n / 2].power_d
    } else {
        0.5 * (es[n / 2 - 1].power_d + es[n / 2].power_d)
    }
}

/// Which intrinsics the controller hands to pose estimation and projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntrinsicsPolicy {
    Adaptive(InterpolationKind),
    Fixed(Intrinsics),
}

impl IntrinsicsPolicy {
    /// The profile entry calibrated closest to focus at `z_mm`.
    pub fn fixed_at(profile: &IntrinsicProfile, etl: &EtlModel, z_mm: f64) -> Result<Self, PipelineError> {
        let p = etl.power_for_focus(z_mm)?.power;
        Ok(Self::Fixed(profile.nearest(p).intrinsics()))
    }

    pub fn intrinsics(&self, profile: &IntrinsicProfile, power: f64) -> Intrinsics {
        match self {
            IntrinsicsPolicy::Adaptive(kind) => interpolate_with(profile, power, *kind).0,
            IntrinsicsPolicy::Fixed(i) => *i,
        }
    }
}

/// Result of one control update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: ControllerState,
    pub pose: PoseEstimate,
    pub measured_distance: f64,
    /// Newly commanded power.
    pub power: f64,
    /// The focus command hit a lens limit.
    pub clamped: bool,
}

pub struct Controller<'a> {
    pub profile: &'a IntrinsicProfile,
    pub target: &'a Target,
    pub etl: &'a EtlModel,
    pub policy: IntrinsicsPolicy,
    pub alpha: f64,
}

impl<'a> Controller<'a> {
    /// Adaptive linear interpolation, α = 0.5.
    pub fn new(profile: &'a IntrinsicProfile, target: &'a Target, etl: &'a EtlModel) -> Self {
        Self { profile, target, etl, policy: IntrinsicsPolicy::Adaptive(InterpolationKind::Linear), alpha: 0.5 }
    }

    pub fn initial_state(&self) -> ControllerState {
        let mut s = ControllerState::initial(self.profile);
        if let IntrinsicsPolicy::Fixed(i) = self.policy {
            s.active_intrinsics = i;
        }
        s
    }

    /// Pose from the detections under the active intrinsics, filtered
    /// distance, focus command, and the intrinsics for the new power. On
    /// `TargetLost` the caller keeps `state`.
    pub fn step_detections(&self, state: &ControllerState, dets: &[Detection]) -> Result<StepOutcome, PipelineError> {
        if dets.is_empty() {
            return Err(PipelineError::TargetLost("no markers detected".into()));
        }
        let est = estimate_target_pose(self.target, dets, &state.active_intrinsics)
            .map_err(|e| PipelineError::TargetLost(e.to_string()))?;
        let d = estimate_target_distance(&est.pose);
        if !(d.is_finite() && d > 0.0) {
            return Err(PipelineError::TargetLost(format!("estimated distance {d} mm")));
        }
        let filtered = match state.filtered_distance {
            Some(f) => self.alpha * d + (1.0 - self.alpha) * f,
            None => d,
        };
        let cmd = self.etl.power_for_focus(filtered)?;
        let next = ControllerState {
            drive_current: self.etl.current_for_power(cmd.power)?,
            active_intrinsics: self.policy.intrinsics(self.profile, cmd.power),
            filtered_distance: Some(filtered),
            last_pose: Some(est.pose),
            frame_index: state.frame_index + 1,
        };
        Ok(StepOutcome { state: next, pose: est, measured_distance: d, power: cmd.power, clamped: cmd.clamped })
    }

    pub fn step(&self, state: &ControllerState, captured: &Image) -> Result<StepOutcome, PipelineError> {
        self.step_detections(state, &detect_markers(captured))
    }
}

/// One control update with the default controller.
pub fn autofocus_step(
    state: &ControllerState,
    captured: &Image,
    profile: &IntrinsicProfile,
    target: &Target,
    etl: &EtlModel,
) -> Result<(ControllerState, Pose), PipelineError> {
    let out = Controller::new(profile, target, etl).step(state, captured)?;
    Ok((out.state, out.pose.pose))
}

/// What the controller sees of one frame.
#[derive(Debug, Clone)]
pub struct Observation {
    /// IR frame; absent with the oracle detector.
    pub capture: Option<Image>,
    pub detections: Vec<Detection>,
}

/// Captures (or synthesizes) the detections of the target at `pose` with
/// the lens at `power`. Oracle markers outside the raster are dropped.
pub fn observe(
    device: &Device,
    scene: &SceneTextures,
    settings: &LoopSettings,
    pose: &Pose,
    power: f64,
    seed: u64,
) -> Result<Observation, PipelineError> {
    match settings.detector {
        DetectorMode::Image => {
            let img = device.capture(scene, pose, power, seed)?;
            let detections = detect_markers(&img);
            Ok(Observation { capture: Some(img), detections })
        }
        DetectorMode::Oracle => {
            let intr = device.intrinsics_at_power(power)?;
            let blur = device.etl.blur_radius(pose.translation.z, power, Channel::Ir)?;
            let (w, h) = (device.width as f64, device.height as f64);
            let detections = oracle_detect(scene.target(), pose, &intr, blur, &settings.noise, seed)
                .into_iter()
                .filter(|d| d.corners.iter().all(|c| c.x >= 0.0 && c.y >= 0.0 && c.x < w && c.y < h))
                .collect();
            Ok(Observation { capture: None, detections })
        }
    }
}

/// Per-frame noise seed derived from the run seed, a stream and an index.
pub fn frame_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Forward render of face content into the device raster under the
/// estimated pose, tinted by the zone color; black where no face is hit.
pub fn generate_projection(
    pose: &Pose,
    intr: &Intrinsics,
    target: &Target,
    content: &[Option<Texture>],
    color: ZoneColor,
    device_wh: (usize, usize),
    supersample: usize,
) -> Image {
    let img = render_content(intr, pose, &target.faces(), content, device_wh, supersample);
    let rgb = color.rgb();
    let (w, h, ch) = img.dims();
    let data = img.into_data().into_iter().enumerate().map(|(i, v)| v * rgb[(i % ch).min(2)]).collect();
    Image::from_vec(w, h, ch, data)
}

/// Texel pitch of generated content: a sixteenth of the smallest feature.
fn content_texel(feature_mm: f64) -> f64 {
    feature_mm / 16.0
}

/// White discs at the reference dots, nothing elsewhere.
pub fn dot_content(target: &Target, radius_mm: f64) -> Vec<Option<Texture>> {
    let dots = target.reference_dots();
    target
        .faces()
        .iter()
        .map(|f| {
            let mine: Vec<Vec2> = dots.iter().filter(|(i, _)| *i == f.index).map(|(_, p)| *p).collect();
            if mine.is_empty() {
                return None;
            }
            let r2 = radius_mm * radius_mm;
            Some(Texture::from_fn(f.half_width, f.half_height, content_texel(radius_mm), 1, 4, move |p| {
                [if mine.iter().any(|d| (p - d).norm_squared() <= r2) { 1.0 } else { 0.0 }; 3]
            }))
        })
        .collect()
}

/// Mid-gray checker on every face, leaving headroom for precompensation.
pub fn checker_content(target: &Target, square_mm: f64) -> Vec<Option<Texture>> {
    target
        .faces()
        .iter()
        .map(|f| {
            Some(Texture::from_fn(f.half_width, f.half_height, content_texel(square_mm), 1, 2, move |p| {
                let (i, j) = ((p.x / square_mm).floor() as i64, (p.y / square_mm).floor() as i64);
                [if (i + j).rem_euclid(2) == 0 { 0.25 } else { 0.75 }; 3]
            }))
        })
        .collect()
}

/// Face points whose registration is scored: the reference dots when the
/// target has them, otherwise the marker corners.
pub fn probe_points(target: &Target) -> Vec<(usize, Vec2)> {
    let dots = target.reference_dots();
    if !dots.is_empty() {
        return dots;
    }
    target.markers().into_iter().flat_map(|(face, m)| m.corners_face().map(|c| (face, c))).collect()
}

/// Face point hit by the ray of device pixel `px` under the true optics.
fn landing_point(true_intr: &Intrinsics, true_pose: &Pose, target: &Target, face: usize, px: Vec2) -> Option<Vec2> {
    let n = true_intr.pixel_to_normalized(px).ok()?;
    let to_face = true_pose.compose(&target.faces()[face].to_object).inverse();
    let o = to_face.translation;
    let d = to_face.rotation * Vec3::new(n.x, n.y, 1.0);
    if d.z.abs() < 1e-12 {
        return None;
    }
    let s = -o.z / d.z;
    (s > 0.0).then(|| Vec2::new(o.x + s * d.x, o.y + s * d.y))
}

/// Board-plane distance (mm) between each probe point and where its
/// projected pixel actually lands, for probes on faces facing the device.
pub fn probe_misalignment(
    target: &Target,
    true_pose: &Pose,
    true_intr: &Intrinsics,
    est_pose: &Pose,
    proj_intr: &Intrinsics,
) -> Vec<f64> {
    let visible = target.visible_faces(true_pose);
    let faces = target.faces();
    probe_points(target)
        .into_iter()
        .filter(|(f, _)| visible.contains(f))
        .filter_map(|(f, p)| {
            let px = project(proj_intr, est_pose, &faces[f].point(p)).ok()?;
            landing_point(true_intr, true_pose, target, f, px).map(|q| (q - p).norm())
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}
