//! Continuous-time 6-DoF trajectories, camera models, rectification, and the
//! rolling-shutter per-pixel time model.

mod camera;
mod pose;
mod rectify;
mod reproject;
mod trajectory;

pub use camera::{read_meta_file, write_meta_file, CameraKind, CameraModel, FrameMeta};
pub use pose::Pose;
pub use rectify::{build_rectification, IndexRatioImage, Rectification};
pub use reproject::{reprojection_displacements, DepthAnchor, Displacements};
pub use trajectory::Trajectory;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("trajectory has no knots")]
    EmptyTrajectory,
    #[error("trajectory timestamps not strictly increasing at knot {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("time {t} s outside trajectory domain [{lo} s, {hi} s]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("row index ratio {ratio} outside [0, 1]")]
    RatioOutOfRange { ratio: f64 },
    #[error("invalid frame metadata: {reason}")]
    BadFrameMeta { reason: String },
    #[error("rectification target must be distortion-free, got {n} coefficients")]
    DistortedRectificationTarget { n: usize },
    #[error("rectification alignment with translation norm {norm} m is unsupported (rotation-only)")]
    TranslationalAlignment { norm: f64 },
    #[error("image size {got_w}x{got_h} does not match camera resolution {want_w}x{want_h}")]
    ResolutionMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("depth anchor {index} has non-positive depth {depth}")]
    NonPositiveDepth { index: usize, depth: f64 },
    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
