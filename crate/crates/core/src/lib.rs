//! Simulator and numerical toolkit for a coaxial projector-camera system whose
//! shared lens carries an electrically tunable element.

pub mod calibration;
pub mod cli;
pub mod device;
pub mod geometry;
pub mod imaging;
pub mod optics;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod scene;
pub mod vision;
