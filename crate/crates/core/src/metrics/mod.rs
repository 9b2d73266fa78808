//! Image-quality metrics (PSNR/SSIM), reprojection-displacement statistics,
//! and static report emission (line plots and ablation tables).

mod plot;
mod ssim;
mod table;

pub use plot::{save_polyline_plot, PlotSeries};
pub use ssim::{ssim, ssim_with_gradient, SsimReference};
pub use table::{AblationTable, RunSummary};

use crate::geometry::{
    reprojection_displacements, CameraModel, DepthAnchor, FrameMeta, GeometryError, Trajectory,
};
use crate::image_buf::{ImageIoError, ImageRgb};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Finite PSNR reported for numerically identical images.
pub const PSNR_SENTINEL_DB: f64 = 99.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image sizes differ: {got_w}x{got_h} vs {want_w}x{want_h}")]
    SizeMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("mask has {got} entries, expected {want}")]
    MaskLengthMismatch { got: usize, want: usize },
    #[error("mask excludes every pixel")]
    EmptyMask,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check_pair(a: &ImageRgb, b: &ImageRgb, mask: &[bool]) -> Result<(), MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::SizeMismatch {
            got_w: b.width,
            got_h: b.height,
            want_w: a.width,
            want_h: a.height,
        });
    }
    if mask.len() != a.width * a.height {
        return Err(MetricsError::MaskLengthMismatch { got: mask.len(), want: a.width * a.height });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over the masked pixels, assuming values
/// in [0, 1]: `10·log10(1 / MSE)`. Identical images report the finite
/// [`PSNR_SENTINEL_DB`] instead of infinity, and the sentinel also caps the
/// result for near-identical pairs.
pub fn psnr(a: &ImageRgb, b: &ImageRgb, mask: &[bool]) -> Result<f64, MetricsError> {
    check_pair(a, b, mask)?;
    let mut sum = 0.0;
    let mut valid = 0usize;
    for (p, &keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        valid += 1;
        for c in 0..3 {
            let d = a.data[3 * p + c] - b.data[3 * p + c];
            sum += d * d;
        }
    }
    if valid == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let mse = sum / (3 * valid) as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_SENTINEL_DB))
}

/// Quartiles of reprojection displacement across one frame's readout window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReprojStats {
    pub frame_id: u64,
    pub t0: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    /// Anchors dropped because motion put them behind the camera.
    pub excluded_behind: usize,
}

/// Per-frame reprojection quartiles plus the count of frames that had no
/// usable depth anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprojSeries {
    pub frames: Vec<FrameReprojStats>,
    pub skipped_no_depth: usize,
}

impl ReprojSeries {
    /// Writes the series as a whitespace-delimited table with a header line.
    pub fn write_table(&self, path: &Path) -> Result<(), MetricsError> {
        let io_err = |source| MetricsError::Io { path: path.display().to_string(), source };
        let mut out = String::new();
        out.push_str("# frame_id t0_s p25_px p50_px p75_px excluded_behind\n");
        for f in &self.frames {
            out.push_str(&format!(
                "{} {:.9} {:.6} {:.6} {:.6} {}\n",
                f.frame_id, f.t0, f.p25, f.p50, f.p75, f.excluded_behind
            ));
        }
        let mut file = std::fs::File::create(path).map_err(io_err)?;
        file.write_all(out.as_bytes()).map_err(io_err)?;
        Ok(())
    }

    /// Points for plotting one quartile against frame start time.
    pub fn quartile_points(&self, which: usize) -> Vec<(f64, f64)> {
        self.frames
            .iter()
            .map(|f| (f.t0, [f.p25, f.p50, f.p75][which.min(2)]))
            .collect()
    }
}

/// For each frame, the 25/50/75th percentiles of anchor displacement between
/// the poses at `t0` and `t0 + readout`. Frames whose anchor list is empty,
/// or whose anchors all left the image, are skipped and counted.
pub fn reproj_percentiles(
    traj: &Trajectory,
    cam: &CameraModel,
    frames: &[(FrameMeta, Vec<DepthAnchor>)],
) -> Result<ReprojSeries, MetricsError> {
    let mut out = Vec::with_capacity(frames.len());
    let mut skipped = 0usize;
    for (meta, anchors) in frames {
        if anchors.is_empty() {
            skipped += 1;
            continue;
        }
        let window = (meta.t0, meta.t0 + meta.readout);
        let disp = reprojection_displacements(traj, cam, anchors, window)?;
        if disp.magnitudes.is_empty() {
            skipped += 1;
            continue;
        }
        out.push(FrameReprojStats {
            frame_id: meta.frame_id,
            t0: meta.t0,
            p25: crate::stats::percentile(&disp.magnitudes, 25.0),
            p50: crate::stats::percentile(&disp.magnitudes, 50.0),
            p75: crate::stats::percentile(&disp.magnitudes, 75.0),
            excluded_behind: disp.excluded_behind,
        });
    }
    Ok(ReprojSeries { frames: out, skipped_no_depth: skipped })
}
