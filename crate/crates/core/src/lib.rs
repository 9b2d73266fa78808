//! Rolling-shutter-aware Gaussian-splatting scene reconstruction with a
//! physically modeled image-formation pipeline (exposure, gain, vignette,
//! gamma-compressed radiance) and a synthetic egocentric capture simulator
//! that provides ground truth for every stage.

pub mod geometry;
pub mod image_buf;
pub mod image_formation;
pub mod metrics;
pub mod optimizer;
pub mod rasterizer;
pub mod scene;
pub mod simulator;

pub(crate) mod stats;
