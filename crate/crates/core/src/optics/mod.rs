//! Ground-truth optics of the shared-lens device.
//!
//! The prime lens and the tunable lens are folded into one equivalent thin
//! lens whose in-focus object distance at 0 D is `z0`; tunable-lens power adds
//! in diopters. The visible channel sees an extra chromatic power offset.

mod fft;
mod psf;

pub use fft::Fft2d;
pub use psf::{
    checker_pattern, convolve, convolve_direct, convolve_fft, make_disk_psf, precompensation_gain, standard_checker,
    wiener_precompensate, DiskPsf,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Intrinsics;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("focus beyond infinity for effective power {0} D")]
    FocusBeyondInfinity(f64),
    #[error("distance must be positive, got {0} mm")]
    NonPositiveDistance(f64),
    #[error("power {0} D outside the lens range")]
    PowerOutOfRange(f64),
    #[error("current {0} mA outside the lens range")]
    CurrentOutOfRange(f64),
    #[error("invalid lens model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Ir,
    Visible,
}

/// Electrically tunable lens plus prime lens, as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtlModel {
    /// In-focus object distance at 0 D, mm.
    pub z0: f64,
    /// Diopters per mA.
    pub current_gain: f64,
    pub power_min: f64,
    pub power_max: f64,
    /// Blur radius gain, px·mm.
    pub blur_gain: f64,
    /// Extra power seen by the visible channel, D.
    pub chroma_offset: f64,
    /// Relative focal-length change per diopter.
    pub breathing_beta: f64,
    /// Principal-point drift, px per diopter.
    pub breathing_gamma: f64,
}

impl Default for EtlModel {
    fn default() -> Self {
        Self {
            z0: 170.0,
            current_gain: 0.04,
            power_min: -10.0,
            power_max: 10.0,
            blur_gain: 2000.0,
            chroma_offset: 0.5,
            breathing_beta: 0.004,
            breathing_gamma: 0.5,
        }
    }
}

/// Power command derived from a target distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusCommand {
    pub power: f64,
    pub clamped: bool,
}

impl EtlModel {
    pub fn validate(&self) -> Result<(), OpticsError> {
        let bad = |m: &str| Err(OpticsError::InvalidModel(m.into()));
        if !(self.z0 > 0.0 && self.z0.is_finite()) {
            return bad("z0 must be positive");
        }
        if !(self.power_min < self.power_max) {
            return bad("power_min must be below power_max");
        }
        if !(self.blur_gain >= 0.0) {
            return bad("blur gain must be non-negative");
        }
        if self.current_gain == 0.0 || !self.current_gain.is_finite() {
            return bad("current gain must be non-zero");
        }
        let finite = [self.chroma_offset, self.breathing_beta, self.breathing_gamma];
        if !finite.iter().all(|v| v.is_finite()) {
            return bad("coefficients must be finite");
        }
        Ok(())
    }

    fn check_power(&self, power: f64) -> Result<(), OpticsError> {
        if power >= self.power_min && power <= self.power_max {
            Ok(())
        } else {
            Err(OpticsError::PowerOutOfRange(power))
        }
    }

    pub fn effective_power(&self, power: f64, channel: Channel) -> f64 {
        match channel {
            Channel::Ir => power,
            Channel::Visible => power + self.chroma_offset,
        }
    }

    /// Object distance (mm) in focus for the given lens power and channel.
    pub fn focus_distance(&self, power: f64, channel: Channel) -> Result<f64, OpticsError> {
        self.check_power(power)?;
        self.focus_distance_unchecked(power, channel)
    }

    fn focus_distance_unchecked(&self, power: f64, channel: Channel) -> Result<f64, OpticsError> {
        let p_eff = self.effective_power(power, channel);
        let inv = 1.0 / self.z0 + p_eff / 1000.0;
        if inv <= 1e-9 {
            return Err(OpticsError::FocusBeyondInfinity(p_eff));
        }
        Ok(1.0 / inv)
    }

    /// IR-channel power that focuses at `z`, clamped into the lens range.
    pub fn power_for_focus(&self, z: f64) -> Result<FocusCommand, OpticsError> {
        if !(z > 0.0) {
            return Err(OpticsError::NonPositiveDistance(z));
        }
        let p = 1000.0 * (1.0 / z - 1.0 / self.z0);
        let clamped_p = p.clamp(self.power_min, self.power_max);
        Ok(FocusCommand { power: clamped_p, clamped: clamped_p != p })
    }

    pub fn current_for_power(&self, power: f64) -> Result<f64, OpticsError> {
        self.check_power(power)?;
        Ok(power / self.current_gain)
    }

    pub fn power_for_current(&self, current_ma: f64) -> Result<f64, OpticsError> {
        let p = self.current_gain * current_ma;
        if p >= self.power_min && p <= self.power_max {
            Ok(p)
        } else {
            Err(OpticsError::CurrentOutOfRange(current_ma))
        }
    }

    /// Defocus blur radius (px) of an object at `z_obj` with lens power `power`.
    pub fn blur_radius(&self, z_obj: f64, power: f64, channel: Channel) -> Result<f64, OpticsError> {
        if !(z_obj > 0.0) {
            return Err(OpticsError::NonPositiveDistance(z_obj));
        }
        let zf = self.focus_distance_unchecked(power, channel)?;
        Ok(self.blur_gain * (1.0 / zf - 1.0 / z_obj).abs())
    }

    /// Ground-truth intrinsics at a lens power (focus breathing).
    pub fn intrinsics_at_power(&self, base: &Intrinsics, power: f64) -> Result<Intrinsics, OpticsError> {
        self.check_power(power)?;
        let scale = 1.0 + self.breathing_beta * power;
        let drift = self.breathing_gamma * power;
        Ok(Intrinsics { fx: base.fx * scale, fy: base.fy * scale, cx: base.cx + drift, cy: base.cy + drift, ..*base })
    }

    /// Stable 64-bit FNV-1a hash of the model's JSON form, for provenance.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("lens model serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}
