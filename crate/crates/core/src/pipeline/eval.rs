//! Adaptive versus fixed intrinsics: board held at each station, loop run to
//! steady state, reference dots projected and their registration measured.

use serde::{Deserialize, Serialize};

use super::{
    dot_content, frame_seed, generate_projection, mean_std, observe, probe_misalignment, Controller, IntrinsicsPolicy,
    PipelineError, Rig,
};
use crate::geometry::{project, Pose, Vec2, Vec3};
use crate::imaging::{centroid, render_external, render_projection_on_surface, ExternalCamera, Region, SceneTextures};
use crate::optics::Channel;
use crate::par;
use crate::scene::{zone_color_saturating, Target};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EvalMode {
    Adaptive,
    Fixed { at_mm: f64 },
}

/// One line of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub distance_mm: f64,
    pub mean_mm: f64,
    pub std_mm: f64,
    pub blur_ir_px: f64,
    pub blur_vis_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationResult {
    pub row: EvalRow,
    /// Per-dot board-plane misalignment from the rendered surface light.
    pub dots_mm: Vec<f64>,
    /// Same dots scored geometrically, without rasterization.
    pub analytic_mm: Vec<f64>,
    /// Mean dot offset in the external view, px.
    pub external_px: f64,
    pub estimated_distance_mm: f64,
    pub power_d: f64,
}

/// Runs every station independently from the initial controller state.
pub fn run_alignment_eval(
    rig: &Rig,
    target: &Target,
    stations: &[f64],
    steps: usize,
    mode: EvalMode,
) -> Result<Vec<StationResult>, PipelineError> {
    rig.settings.validate()?;
    if target.reference_dots().is_empty() {
        return Err(PipelineError::Config("evaluation target has no reference dots".into()));
    }
    if steps == 0 {
        return Err(PipelineError::Config("at least one loop step per station".into()));
    }
    let policy = match mode {
        EvalMode::Adaptive => IntrinsicsPolicy::Adaptive(rig.settings.interpolation),
        EvalMode::Fixed { at_mm } => IntrinsicsPolicy::fixed_at(&rig.profile, &rig.device.etl, at_mm)?,
    };
    let scene = SceneTextures::new(target);
    let indexed: Vec<(usize, f64)> = stations.iter().copied().enumerate().collect();
    par::map_slice(&indexed, |(i, z)| run_station(rig, &scene, policy, *i as u64, *z, steps)).into_iter().collect()
}

fn run_station(
    rig: &Rig,
    scene: &SceneTextures,
    policy: IntrinsicsPolicy,
    index: u64,
    z: f64,
    steps: usize,
) -> Result<StationResult, PipelineError> {
    let dev = &rig.device;
    let target = scene.target();
    let ctl = Controller { policy, alpha: rig.settings.ema_alpha, ..Controller::new(&rig.profile, target, &dev.etl) };
    let true_pose = Pose::from_translation(Vec3::new(0.0, 0.0, z));
    let mut state = ctl.initial_state();
    let mut last = None;
    for k in 0..steps {
        let power = state.power(&dev.etl)?;
        let obs =
            observe(dev, scene, &rig.settings, &true_pose, power, frame_seed(rig.settings.seed, index, k as u64))?;
        let out = ctl.step_detections(&state, &obs.detections)?;
        state = out.state;
        last = Some(out);
    }
    let out = last.expect("at least one step");
    let est_pose = out.pose.pose;
    let proj_intr = state.active_intrinsics;
    let power = out.power;

    let zone = zone_color_saturating(out.measured_distance);
    let content = dot_content(target, dot_radius(target));
    let img = generate_projection(
        &est_pose,
        &proj_intr,
        target,
        &content,
        zone,
        dev.raster(),
        rig.settings.projection_supersample,
    );
    let irr = render_projection_on_surface(&img, scene, &true_pose, &dev.etl, &dev.intrinsics, power, dev.raster())?;
    let true_intr = dev.intrinsics_at_power(power)?;
    let blur_ir = dev.etl.blur_radius(z, power, Channel::Ir)?;
    let blur_vis = dev.etl.blur_radius(z, power, Channel::Visible)?;

    let tex = irr.face(0).ok_or_else(|| PipelineError::TargetLost("board receives no light".into()))?;
    let window_mm = 3.0 * dot_radius(target) + 2.0 * blur_vis * z / true_intr.fx + 1.0;
    let mut dots_mm = Vec::new();
    for (_, d) in target.reference_dots() {
        let t = tex.to_texel(d);
        let region = Region::around(tex.base(), t.x, t.y, window_mm / tex.texel_mm());
        let c = centroid(tex.base(), region, peak(tex.base(), region) * 0.1)
            .map_err(|_| PipelineError::TargetLost(format!("projected dot near {d:?} not found")))?;
        let got = tex.texel_center(0, 0) + Vec2::new(c.0, c.1) * tex.texel_mm();
        dots_mm.push((got - d).norm());
    }
    let analytic_mm = probe_misalignment(target, &true_pose, &true_intr, &est_pose, &proj_intr);

    let ext = ExternalCamera::evaluation_default();
    let view = render_external(&ext, scene, &true_pose, &irr, 0.0, 1);
    let ext_pose = ext.pose.compose(&true_pose);
    let mut ext_err = Vec::new();
    for (_, d) in target.reference_dots() {
        let expect = project(&ext.intrinsics, &ext_pose, &Vec3::new(d.x, d.y, 0.0))?;
        let r = window_mm * ext.intrinsics.fx / (ext_pose.transform_point(&Vec3::new(d.x, d.y, 0.0)).z);
        let region = Region::around(&view, expect.x, expect.y, r);
        if let Ok(c) = centroid(&view, region, peak(&view, region) * 0.1) {
            ext_err.push((Vec2::new(c.0, c.1) - expect).norm());
        }
    }
    let external_px = if ext_err.is_empty() { f64::NAN } else { mean_std(&ext_err).0 };

    let (mean_mm, std_mm) = mean_std(&dots_mm);
    Ok(StationResult {
        row: EvalRow { distance_mm: z, mean_mm, std_mm, blur_ir_px: blur_ir, blur_vis_px: blur_vis },
        dots_mm,
        analytic_mm,
        external_px,
        estimated_distance_mm: out.measured_distance,
        power_d: power,
    })
}

fn dot_radius(target: &Target) -> f64 {
    match target {
        Target::Board(b) => b.dot_radius_mm,
        Target::Prism(_) => 1.5,
    }
}

fn peak(img: &crate::imaging::Image, r: Region) -> f64 {
    let ch = img.channels();
    let mut m: f64 = 0.0;
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            m = m.max((0..ch).map(|c| img.get(x, y, c)).sum::<f64>() / ch as f64);
        }
    }
    m
}
