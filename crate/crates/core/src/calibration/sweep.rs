//! Multi-focus calibration sweep: at each station the lens is focused on the
//! station distance and a full calibration is run there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{calibrate, CalibView, CalibrationError, IntrinsicProfile, ProfileEntry};
use crate::device::Device;
use crate::geometry::{project, rotation_from_axis_angle, Pose, Vec2, Vec3};
use crate::imaging::SceneTextures;
use crate::optics::Channel;
use crate::par;
use crate::scene::{marker_corners_3d, FiducialBoard, Target, ZONE_MAX_MM, ZONE_MIN_MM};
use crate::vision::{detect_markers, oracle_detect, Detection, DetectorMode, NoiseModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSetup {
    pub device: Device,
    pub detector: DetectorMode,
    pub noise: NoiseModel,
    pub views_per_station: usize,
    pub max_tilt_deg: f64,
    pub seed: u64,
}

impl Default for SweepSetup {
    fn default() -> Self {
        Self {
            device: Device::default(),
            detector: DetectorMode::Image,
            noise: NoiseModel::default(),
            views_per_station: 8,
            max_tilt_deg: 35.0,
            seed: 0,
        }
    }
}

/// Board used at station `z`: 4×3 markers scaled with distance so the image
/// footprint stays roughly constant.
pub fn station_board(z: f64) -> FiducialBoard {
    FiducialBoard::calibration_grid(4, 3, 0.075 * z, 16)
}

fn station_seed(seed: u64, z: f64) -> u64 {
    seed ^ (z.to_bits().rotate_left(17)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Deterministic board poses around `z`: tilt between 10° and the maximum
/// about an axis that turns with the view index, in-plane spin, lateral
/// offset. Every board corner stays inside the raster with a margin.
pub fn station_views(setup: &SweepSetup, z: f64) -> Result<Vec<Pose>, CalibrationError> {
    let dev = &setup.device;
    let power = dev.etl.power_for_focus(z).map_err(|e| CalibrationError::InvalidSweep(e.to_string()))?.power;
    let intr = dev.intrinsics_at_power(power).map_err(|e| CalibrationError::InvalidSweep(e.to_string()))?;
    let board = station_board(z);
    let (hw, hh) = (board.width_mm / 2.0, board.height_mm / 2.0);
    let outline = [Vec3::new(-hw, -hh, 0.0), Vec3::new(hw, -hh, 0.0), Vec3::new(hw, hh, 0.0), Vec3::new(-hw, hh, 0.0)];
    let margin = 8.0;
    let fits = |pose: &Pose| {
        outline.iter().all(|x| match project(&intr, pose, x) {
            Ok(p) => {
                p.x > margin
                    && p.y > margin
                    && p.x < dev.width as f64 - 1.0 - margin
                    && p.y < dev.height as f64 - 1.0 - margin
            }
            Err(_) => false,
        })
    };
    let n = setup.views_per_station;
    let max_tilt = setup.max_tilt_deg.to_radians();
    let min_tilt = 10f64.to_radians().min(max_tilt);
    let mut rng = ChaCha8Rng::seed_from_u64(station_seed(setup.seed, z));
    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let mut found = None;
        for _ in 0..200 {
            let phi = std::f64::consts::TAU * k as f64 / n as f64 + rng.random_range(-0.3..0.3);
            let tilt = rng.random_range(min_tilt..=max_tilt);
            let spin = rng.random_range(-0.5..0.5);
            let axis = Vec3::new(phi.cos(), phi.sin(), 0.0);
            let rot = rotation_from_axis_angle(axis * tilt) * rotation_from_axis_angle(Vec3::z() * spin);
            let off = 0.06 * z;
            let t = Vec3::new(rng.random_range(-off..off), rng.random_range(-off..off), z);
            let pose = Pose { rotation: rot, translation: t };
            if fits(&pose) {
                found = Some(pose);
                break;
            }
        }
        poses.push(
            found.ok_or_else(|| CalibrationError::InvalidSweep(format!("no board pose fits the raster at {z} mm")))?,
        );
    }
    Ok(poses)
}

fn correspondences(target: &Target, dets: &[Detection]) -> Vec<(Vec2, Vec2)> {
    let mut out = Vec::new();
    for d in dets {
        if let Ok(corners) = marker_corners_3d(target, d.marker_id) {
            for (x, u) in corners.iter().zip(d.corners) {
                out.push((Vec2::new(x.x, x.y), u));
            }
        }
    }
    out
}

/// Calibrates one station and returns its profile entry.
pub fn calibrate_station(setup: &SweepSetup, z: f64, station_index: usize) -> Result<ProfileEntry, CalibrationError> {
    let dev = &setup.device;
    let cmd = dev.etl.power_for_focus(z).map_err(|e| CalibrationError::InvalidSweep(e.to_string()))?;
    let current = dev.etl.current_for_power(cmd.power).map_err(|e| CalibrationError::InvalidSweep(e.to_string()))?;
    let intr = dev.intrinsics_at_power(cmd.power).map_err(|e| CalibrationError::InvalidSweep(e.to_string()))?;
    let target = Target::Board(station_board(z));
    let poses = station_views(setup, z)?;
    let scene = match setup.detector {
        DetectorMode::Image => Some(SceneTextures::new(&target)),
        DetectorMode::Oracle => None,
    };
    let expected = target.markers().len();
    let mut views = Vec::with_capacity(poses.len());
    for (v, pose) in poses.iter().enumerate() {
        let view_seed = setup.seed.wrapping_add(1000 * station_index as u64 + v as u64);
        let dets = match &scene {
            Some(scene) => {
                let img = dev
                    .capture(scene, pose, cmd.power, view_seed)
                    .map_err(|e| CalibrationError::InvalidSweep(e.to_string()))?;
                detect_markers(&img)
            }
            None => {
                let blur = dev.etl.blur_radius(pose.translation.z, cmd.power, Channel::Ir).unwrap_or(0.0);
                oracle_detect(&target, pose, &intr, blur, &setup.noise, view_seed)
            }
        };
        let corr = correspondences(&target, &dets);
        if dets.len() * 2 < expected {
            return Err(CalibrationError::DetectionFailed { view: v, found: dets.len() });
        }
        views.push(CalibView::new(corr)?);
    }
    let r = calibrate(&views)?;
    let i = r.intrinsics;
    Ok(ProfileEntry {
        power_d: cmd.power,
        current_ma: current,
        fx: i.fx,
        fy: i.fy,
        cx: i.cx,
        cy: i.cy,
        k1: i.k1,
        k2: i.k2,
        rms_px: r.rms,
    })
}

/// Calibrates every station (in parallel) and builds the power-indexed profile.
pub fn sweep_calibrate(setup: &SweepSetup, stations: &[f64]) -> Result<IntrinsicProfile, CalibrationError> {
    setup.device.validate().map_err(CalibrationError::InvalidSweep)?;
    if let Some(z) = stations.iter().find(|z| !(ZONE_MIN_MM..=ZONE_MAX_MM).contains(*z)) {
        return Err(CalibrationError::InvalidSweep(format!("station {z} mm outside [{ZONE_MIN_MM}, {ZONE_MAX_MM}]")));
    }
    if stations.len() < 2 {
        return Err(CalibrationError::InsufficientStations(stations.len()));
    }
    let indexed: Vec<(usize, f64)> = stations.iter().copied().enumerate().collect();
    let results = par::map_slice(&indexed, |(i, z)| {
        calibrate_station(setup, *z, *i).map_err(|e| CalibrationError::Station { z_mm: *z, source: Box::new(e) })
    });
    let entries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut profile = IntrinsicProfile::new(setup.device.width, setup.device.height, entries)?;
    profile.etl_hash = Some(setup.device.etl.config_hash());
    Ok(profile)
}
