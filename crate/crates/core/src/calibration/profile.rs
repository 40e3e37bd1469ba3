use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::geometry::Intrinsics;

pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub power_d: f64,
    pub current_ma: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub rms_px: f64,
}

impl ProfileEntry {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_params(&[self.fx, self.fy, self.cx, self.cy, self.k1, self.k2])
    }

    fn params(&self) -> [f64; 6] {
        [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRaster {
    pub width: usize,
    pub height: usize,
}

/// Intrinsics tabulated over ETL optical power, sorted by increasing power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicProfile {
    pub version: u32,
    pub device: DeviceRaster,
    pub entries: Vec<ProfileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etl_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix_s: Option<u64>,
}

impl IntrinsicProfile {
    /// Sorts entries by power and checks the table invariants.
    pub fn new(width: usize, height: usize, mut entries: Vec<ProfileEntry>) -> Result<Self, CalibrationError> {
        if entries.len() < 2 {
            return Err(CalibrationError::InsufficientStations(entries.len()));
        }
        entries.sort_by(|a, b| a.power_d.total_cmp(&b.power_d));
        let p = Self {
            version: PROFILE_VERSION,
            device: DeviceRaster { width, height },
            entries,
            etl_hash: None,
            created_unix_s: None,
        };
        p.validate().map_err(CalibrationError::Schema)?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.version != PROFILE_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        if self.entries.len() < 2 {
            return Err(format!("profile needs at least 2 entries, has {}", self.entries.len()));
        }
        if self.entries.windows(2).any(|w| !(w[1].power_d > w[0].power_d)) {
            return Err("entry powers must be strictly increasing".into());
        }
        for e in &self.entries {
            if !(e.rms_px >= 0.0) {
                return Err(format!("negative residual at {} D", e.power_d));
            }
            if e.intrinsics().validate().is_err() || !e.current_ma.is_finite() {
                return Err(format!("invalid intrinsics at {} D", e.power_d));
            }
        }
        Ok(())
    }

    pub fn min_power(&self) -> f64 {
        self.entries[0].power_d
    }

    pub fn max_power(&self) -> f64 {
        self.entries[self.entries.len() - 1].power_d
    }

    /// Entry whose power is nearest to `power`.
    pub fn nearest(&self, power: f64) -> &ProfileEntry {
        self.entries
            .iter()
            .min_by(|a, b| (a.power_d - power).abs().total_cmp(&(b.power_d - power).abs()))
            .expect("profile is non-empty")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let p: Self = serde_json::from_str(text).map_err(|e| CalibrationError::Schema(e.to_string()))?;
        p.validate().map_err(CalibrationError::Schema)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationKind {
    #[default]
    Linear,
    /// Piecewise constant at the nearest node.
    Nearest,
}

/// Per-parameter interpolation over power. Outside the table the nearest
/// endpoint is returned with `clamped = true`.
pub fn interpolate(profile: &IntrinsicProfile, power: f64) -> (Intrinsics, bool) {
    interpolate_with(profile, power, InterpolationKind::Linear)
}

pub fn interpolate_with(profile: &IntrinsicProfile, power: f64, kind: InterpolationKind) -> (Intrinsics, bool) {
    let es = &profile.entries;
    if power <= profile.min_power() {
        return (es[0].intrinsics(), power < profile.min_power());
    }
    if power >= profile.max_power() {
        return (es[es.len() - 1].intrinsics(), power > profile.max_power());
    }
    if kind == InterpolationKind::Nearest {
        return (profile.nearest(power).intrinsics(), false);
    }
    let i = es.partition_point(|e| e.power_d <= power);
    let (a, b) = (&es[i - 1], &es[i]);
    if power == a.power_d {
        return (a.intrinsics(), false);
    }
    let t = (power - a.power_d) / (b.power_d - a.power_d);
    let (pa, pb) = (a.params(), b.params());
    let p: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x + (y - x) * t).collect();
    (Intrinsics::from_params(&p), false)
}

pub fn save_profile(profile: &IntrinsicProfile, path: &Path) -> Result<(), CalibrationError> {
    std::fs::write(path, profile.to_json() + "\n").map_err(|e| CalibrationError::Io(format!("{}: {e}", path.display())))
}

pub fn load_profile(path: &Path) -> Result<IntrinsicProfile, CalibrationError> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibrationError::Io(format!("{}: {e}", path.display())))?;
    IntrinsicProfile::from_json(&text)
}
