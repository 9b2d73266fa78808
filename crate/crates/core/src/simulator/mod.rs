//! Synthetic egocentric capture: procedural ground-truth Gaussian scenes,
//! head-motion trajectories sampled at IMU rate, and a forward sensor model
//! that writes rolling-shutter, auto-exposed, vignetted, shot-noisy datasets
//! together with the exact ground truth that produced them.

mod capture;
mod dataset;
mod motion;
mod scenes;

pub use capture::{
    capture, write_anchor_file, ExposurePolicy, PoseDegradation, SensorProfile,
    AUTO_EXPOSURE_TARGET, DEFAULT_EXPOSURE_CAP_S, DEFAULT_FRAME_RATE_HZ, DEFAULT_READOUT_S,
};
pub use dataset::{CameraDescription, CaptureDataset, Manifest};
pub use motion::{MotionKind, MotionProfile, DEFAULT_KNOT_RATE_HZ, STAND_OFF_M};
pub use scenes::{generate_scene, SceneKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid simulator parameter: {what}")]
    BadParams { what: String },
    #[error("dataset at {dir} is malformed: {what}")]
    BadDataset { dir: String, what: String },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Formation(#[from] crate::image_formation::FormationError),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Image(#[from] crate::image_buf::ImageIoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}
