//! Run configuration: one JSON document with an explicit seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{InterpolationKind, SweepSetup};
use crate::device::Device;
use crate::geometry::Intrinsics;
use crate::imaging::CaptureSettings;
use crate::optics::EtlModel;
use crate::pipeline::LoopSettings;
use crate::scene::{SceneDescription, ZONE_MAX_MM, ZONE_MIN_MM};
use crate::vision::{DetectorMode, NoiseModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub width: usize,
    pub height: usize,
    /// Ground truth at 0 D.
    pub intrinsics: Intrinsics,
    pub capture: CaptureSettings,
}

impl Default for DeviceSection {
    fn default() -> Self {
        let d = Device::default();
        Self { width: d.width, height: d.height, intrinsics: d.intrinsics, capture: d.capture }
    }
}

fn default_stations() -> Vec<f64> {
    (0..10).map(|i| 70.0 + 20.0 * i as f64).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub device: DeviceSection,
    #[serde(default)]
    pub etl: EtlModel,
    /// Scene JSON, relative to the config file. Without it the built-in
    /// evaluation board and projection prism are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default = "default_stations")]
    pub stations_mm: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub detector: DetectorMode,
    #[serde(default)]
    pub interpolation: InterpolationKind,
    /// Corner noise of the oracle detector.
    #[serde(default)]
    pub oracle_noise: NoiseModel,
    #[serde(default = "default_views")]
    pub views_per_station: usize,
    #[serde(default = "default_tilt")]
    pub max_tilt_deg: f64,
    #[serde(default = "default_eval_steps")]
    pub eval_steps: usize,
    #[serde(default = "default_frames")]
    pub dpm_frames: usize,
    #[serde(default = "default_alpha")]
    pub ema_alpha: f64,
    #[serde(default = "default_nsr")]
    pub wiener_nsr: f64,
    #[serde(default = "default_ambient")]
    pub ambient: f64,
    /// Directory the config was read from; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_views() -> usize {
    8
}
fn default_tilt() -> f64 {
    35.0
}
fn default_eval_steps() -> usize {
    10
}
fn default_frames() -> usize {
    60
}
fn default_alpha() -> f64 {
    0.5
}
fn default_nsr() -> f64 {
    0.01
}
fn default_ambient() -> f64 {
    0.3
}

impl RunConfig {
    /// Defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn device(&self) -> Device {
        Device {
            width: self.device.width,
            height: self.device.height,
            intrinsics: self.device.intrinsics,
            etl: self.etl,
            capture: self.device.capture,
        }
    }

    pub fn sweep_setup(&self) -> SweepSetup {
        SweepSetup {
            device: self.device(),
            detector: self.detector,
            noise: self.oracle_noise,
            views_per_station: self.views_per_station,
            max_tilt_deg: self.max_tilt_deg,
            seed: self.seed,
        }
    }

    pub fn loop_settings(&self) -> LoopSettings {
        LoopSettings {
            detector: self.detector,
            noise: self.oracle_noise,
            interpolation: self.interpolation,
            ema_alpha: self.ema_alpha,
            wiener_nsr: self.wiener_nsr,
            ambient: self.ambient,
            seed: self.seed,
            ..LoopSettings::default()
        }
    }

    /// The configured scene, if any.
    pub fn scene_description(&self) -> Result<Option<SceneDescription>, String> {
        match &self.scene {
            Some(p) => {
                let path = self.resolve(p);
                SceneDescription::load(&path).map(Some).map_err(|e| format!("scene {}: {e}", path.display()))
            }
            None => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.device().validate()?;
        if let Some(z) = self.stations_mm.iter().find(|z| !(ZONE_MIN_MM..=ZONE_MAX_MM).contains(*z)) {
            return Err(format!("station {z} mm outside [{ZONE_MIN_MM}, {ZONE_MAX_MM}]"));
        }
        if let Some(p) = &self.scene {
            let path = self.resolve(p);
            if !path.is_file() {
                return Err(format!("scene file {} not found", path.display()));
            }
            self.scene_description()?.map(|s| s.build_target()).transpose().map_err(|e| e.to_string())?;
        }
        if self.views_per_station < 3 || !(self.max_tilt_deg > 0.0 && self.max_tilt_deg < 80.0) {
            return Err("views_per_station must be ≥ 3 and max_tilt_deg in (0, 80)".into());
        }
        if self.eval_steps == 0 || self.dpm_frames < 2 {
            return Err("eval_steps must be ≥ 1 and dpm_frames ≥ 2".into());
        }
        self.loop_settings().validate().map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        assert!(RunConfig::from_json("{}").unwrap_err().contains("seed"));
        let c = RunConfig::from_json(r#"{"seed": 3}"#).unwrap();
        assert_eq!(c, RunConfig::with_seed(3));
        assert_eq!(c.stations_mm.len(), 10);
        assert_eq!(c.device(), Device::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trips() {
        let mut c = RunConfig::with_seed(11);
        c.detector = DetectorMode::Oracle;
        c.etl.blur_gain = 1500.0;
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "colour": 2}"#).is_err());
        let mut c = RunConfig::with_seed(1);
        c.stations_mm = vec![60.0, 100.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::with_seed(1);
        c.scene = Some(PathBuf::from("/nonexistent/scene.json"));
        assert!(c.validate().unwrap_err().contains("not found"));
        let mut c = RunConfig::with_seed(1);
        c.ema_alpha = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_scene_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.json"), SceneDescription::dpm_default().to_json()).unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"seed": 1, "scene": "s.json"}"#).unwrap();
        let c = RunConfig::load(&cfg).unwrap();
        assert_eq!(c.scene_description().unwrap(), Some(SceneDescription::dpm_default()));
    }
}
