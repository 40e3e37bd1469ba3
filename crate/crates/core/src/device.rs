//! The simulated device: one raster shared by capture and projection, a
//! prime lens with radial distortion, and the tunable element.

use serde::{Deserialize, Serialize};

use crate::geometry::{Intrinsics, Pose};
use crate::imaging::{render_capture, CaptureSettings, Image, RenderError, SceneTextures};
use crate::optics::{EtlModel, OpticsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Device {
    pub width: usize,
    pub height: usize,
    /// Ground-truth intrinsics at 0 D.
    pub intrinsics: Intrinsics,
    pub etl: EtlModel,
    pub capture: CaptureSettings,
}

impl Default for Device {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            intrinsics: Intrinsics::new(600.0, 600.0, 256.0, 256.0, -0.05, 0.01).expect("valid default intrinsics"),
            etl: EtlModel::default(),
            capture: CaptureSettings::default(),
        }
    }
}

impl Device {
    pub fn raster(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width < 64 || self.height < 64 {
            return Err("device raster must be at least 64×64".into());
        }
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        self.etl.validate().map_err(|e| e.to_string())?;
        if !(self.capture.noise_sigma >= 0.0) || self.capture.supersample == 0 {
            return Err("capture settings out of range".into());
        }
        Ok(())
    }

    pub fn intrinsics_at_power(&self, power: f64) -> Result<Intrinsics, OpticsError> {
        self.etl.intrinsics_at_power(&self.intrinsics, power)
    }

    /// IR frame with the noise stream chosen by `seed`.
    pub fn capture(&self, scene: &SceneTextures, pose: &Pose, power: f64, seed: u64) -> Result<Image, RenderError> {
        let settings = CaptureSettings { seed, ..self.capture };
        render_capture(scene, pose, &self.etl, &self.intrinsics, power, self.raster(), &settings)
    }
}
