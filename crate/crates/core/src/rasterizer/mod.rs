//! Differentiable single-pose Gaussian rasterization.
//!
//! Gaussians are projected with a perspective pinhole model and first-order
//! covariance propagation, depth-sorted, and alpha-composited front to back
//! per pixel. The output color stays in the scene's stored (gamma-compressed)
//! space; response and weighting are applied downstream. `backward` returns
//! exact analytic gradients of the compositing.

mod backward;

pub use backward::GradientBuffer;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraKind, CameraModel, Pose};
use crate::image_buf::{ImageMono, ImageRgb};
use crate::scene::{activate_opacity, GaussianScene, SceneError};

/// Gaussians with camera-space depth below this are culled (meters).
pub const NEAR_PLANE: f64 = 0.01;
/// Front-to-back accumulation stops once transmittance drops below this.
pub const TERMINATION_TRANSMITTANCE: f64 = 1e-4;
/// Low-pass dilation added to the projected covariance diagonal (px²).
pub const COVARIANCE_DILATION: f64 = 0.3;
/// Screen-space bounding box radius in standard deviations.
pub const BBOX_SIGMA: f64 = 3.0;
/// Contributions with weighted opacity below this are skipped in both the
/// forward and backward pass (identically, so gradients stay consistent).
const ALPHA_SKIP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum RasterizeError {
    #[error("rasterizer requires a pinhole camera, got {kind:?}")]
    UnsupportedCamera { kind: CameraKind },
    #[error("rasterizer requires a distortion-free camera model")]
    DistortedCamera,
    #[error("non-finite value in gaussian {index} ({field})")]
    NonFiniteGaussian { index: usize, field: &'static str },
    #[error("{what} is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    SizeMismatch { what: &'static str, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("pixel mask has {got} entries, camera needs {want}")]
    MaskSizeMismatch { got: usize, want: usize },
    #[error("gradient buffer holds {got} gaussians, scene has {want}")]
    GradientShapeMismatch { got: usize, want: usize },
}

/// Rendered output of a single-pose rasterization.
///
/// `color` is in the scene's stored color space; `alpha` is accumulated
/// opacity in [0,1]; `depth` is the opacity-weighted mean camera-space depth
/// (0 where nothing rendered). Pixels excluded by a mask hold the background
/// color with alpha 0.
#[derive(Debug, Clone)]
pub struct RenderedSample {
    pub color: ImageRgb,
    pub alpha: ImageMono,
    pub depth: ImageMono,
}

struct PreparedGaussian {
    /// Index into the scene arrays.
    index: u32,
    mean_cam: Vector3<f64>,
    mean2d: Vector2<f64>,
    /// Jacobian of the projection at the mean.
    jac: Matrix2x3<f64>,
    /// Camera-frame 3D covariance.
    cov_cam: Matrix3<f64>,
    /// Inverse of the dilated 2D covariance.
    prec: Matrix2<f64>,
    /// Activated opacity.
    alpha: f64,
    x0: i32,
    x1: i32,
    y0: i32,
    y1: i32,
}

/// Projection and per-pixel contributor lists for one (scene, camera, pose)
/// triple, shared between a forward and a backward pass.
pub struct PreparedRaster {
    width: usize,
    height: usize,
    focal: f64,
    /// Culled, depth-sorted gaussians.
    gaussians: Vec<PreparedGaussian>,
    /// CSR offsets into `entries`, one slice per pixel.
    offsets: Vec<u32>,
    /// Contributor lists: positions into `gaussians`, in depth order.
    entries: Vec<u32>,
    mask: Option<Vec<bool>>,
    /// World-to-camera rotation.
    w2c: Matrix3<f64>,
}

fn check_camera(cam: &CameraModel) -> Result<(), RasterizeError> {
    if cam.kind != CameraKind::Pinhole {
        return Err(RasterizeError::UnsupportedCamera { kind: cam.kind });
    }
    if !cam.is_distortion_free() {
        return Err(RasterizeError::DistortedCamera);
    }
    Ok(())
}

fn map_scene_error(e: SceneError) -> RasterizeError {
    match e {
        SceneError::NonFinite { index, field } => {
            RasterizeError::NonFiniteGaussian { index, field }
        }
        // check_finite only produces NonFinite; anything else is a logic bug.
        other => unreachable!("unexpected scene error: {other}"),
    }
}

/// Project and bin the scene for one pose. `mask`, when given, restricts all
/// work to pixels whose entry is true.
pub fn prepare(
    scene: &GaussianScene,
    cam: &CameraModel,
    pose: &Pose,
    mask: Option<&[bool]>,
) -> Result<PreparedRaster, RasterizeError> {
    check_camera(cam)?;
    scene.check_finite().map_err(map_scene_error)?;
    let (w, h) = (cam.width, cam.height);
    let px_count = w * h;
    if let Some(m) = mask {
        if m.len() != px_count {
            return Err(RasterizeError::MaskSizeMismatch { got: m.len(), want: px_count });
        }
    }

    let w2c = pose.rotation.inverse().to_rotation_matrix().into_inner();
    let cam_center = pose.translation;
    let f = cam.focal;

    let mut prepared = Vec::new();
    for i in 0..scene.len() {
        let mean_cam = w2c * (scene.means[i] - cam_center);
        let z = mean_cam.z;
        if z < NEAR_PLANE {
            continue;
        }
        let (x, y) = (mean_cam.x, mean_cam.y);
        let mean2d = Vector2::new(f * x / z + cam.cx, f * y / z + cam.cy);
        let jac = Matrix2x3::new(
            f / z, 0.0, -f * x / (z * z),
            0.0, f / z, -f * y / (z * z),
        );
        let cov_cam = w2c * scene.covariance(i) * w2c.transpose();
        let mut cov2d = jac * cov_cam * jac.transpose();
        cov2d[(0, 0)] += COVARIANCE_DILATION;
        cov2d[(1, 1)] += COVARIANCE_DILATION;
        let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        let prec = Matrix2::new(
            cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det,
            -cov2d[(1, 0)] / det, cov2d[(0, 0)] / det,
        );
        let rx = BBOX_SIGMA * cov2d[(0, 0)].sqrt();
        let ry = BBOX_SIGMA * cov2d[(1, 1)].sqrt();
        let x0 = (mean2d.x - rx).ceil().max(0.0) as i32;
        let x1 = (mean2d.x + rx).floor().min(w as f64 - 1.0) as i32;
        let y0 = (mean2d.y - ry).ceil().max(0.0) as i32;
        let y1 = (mean2d.y + ry).floor().min(h as f64 - 1.0) as i32;
        if x0 > x1 || y0 > y1 || (mean2d.x + rx) < 0.0 || (mean2d.y + ry) < 0.0 {
            continue;
        }
        prepared.push(PreparedGaussian {
            index: i as u32,
            mean_cam,
            mean2d,
            jac,
            cov_cam,
            prec,
            alpha: activate_opacity(scene.opacities_raw[i]),
            x0,
            x1,
            y0,
            y1,
        });
    }

    // Depth order with index tie-break keeps the composite deterministic.
    prepared.sort_by(|a, b| {
        a.mean_cam
            .z
            .partial_cmp(&b.mean_cam.z)
            .expect("finite depths")
            .then(a.index.cmp(&b.index))
    });

    // Two-pass CSR build; filling in depth order leaves every per-pixel
    // slice already sorted.
    let mut counts = vec![0u32; px_count];
    let pixel_on = |idx: usize| mask.map_or(true, |m| m[idx]);
    for g in &prepared {
        for py in g.y0..=g.y1 {
            let row = py as usize * w;
            for px in g.x0..=g.x1 {
                let idx = row + px as usize;
                if pixel_on(idx) {
                    counts[idx] += 1;
                }
            }
        }
    }
    let mut offsets = vec![0u32; px_count + 1];
    for i in 0..px_count {
        offsets[i + 1] = offsets[i] + counts[i];
    }
    let mut cursor: Vec<u32> = offsets[..px_count].to_vec();
    let mut entries = vec![0u32; offsets[px_count] as usize];
    for (slot, g) in prepared.iter().enumerate() {
        for py in g.y0..=g.y1 {
            let row = py as usize * w;
            for px in g.x0..=g.x1 {
                let idx = row + px as usize;
                if pixel_on(idx) {
                    entries[cursor[idx] as usize] = slot as u32;
                    cursor[idx] += 1;
                }
            }
        }
    }

    Ok(PreparedRaster {
        width: w,
        height: h,
        focal: f,
        gaussians: prepared,
        offsets,
        entries,
        mask: mask.map(<[bool]>::to_vec),
        w2c,
    })
}

#[inline]
fn clamped_color(c: &Vector3<f64>) -> Vector3<f64> {
    c.map(|v| v.max(0.0))
}

impl PreparedRaster {
    fn pixel_enabled(&self, idx: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[idx])
    }

    /// Front-to-back composite over the prepared contributor lists.
    pub fn forward(&self, scene: &GaussianScene, background: Vector3<f64>) -> RenderedSample {
        let (w, h) = (self.width, self.height);
        let mut color = ImageRgb::zeros(w, h);
        let mut alpha = ImageMono::zeros(w, h);
        let mut depth = ImageMono::zeros(w, h);
        for py in 0..h {
            for px in 0..w {
                let idx = py * w + px;
                if !self.pixel_enabled(idx) {
                    color.set(px, py, background.into());
                    continue;
                }
                let slice =
                    &self.entries[self.offsets[idx] as usize..self.offsets[idx + 1] as usize];
                let (pxf, pyf) = (px as f64, py as f64);
                let mut t = 1.0;
                let mut acc = Vector3::zeros();
                let mut a_sum = 0.0;
                let mut d_sum = 0.0;
                for &slot in slice {
                    let g = &self.gaussians[slot as usize];
                    let d = Vector2::new(pxf - g.mean2d.x, pyf - g.mean2d.y);
                    let gv = (-0.5 * d.dot(&(g.prec * d))).exp();
                    let a = g.alpha * gv;
                    if a < ALPHA_SKIP {
                        continue;
                    }
                    let wgt = t * a;
                    acc += wgt * clamped_color(&scene.colors[g.index as usize]);
                    a_sum += wgt;
                    d_sum += wgt * g.mean_cam.z;
                    t *= 1.0 - a;
                    if t < TERMINATION_TRANSMITTANCE {
                        break;
                    }
                }
                acc += t * background;
                color.set(px, py, [acc.x, acc.y, acc.z]);
                alpha.set(px, py, a_sum);
                if a_sum > 0.0 {
                    depth.set(px, py, d_sum / a_sum);
                }
            }
        }
        RenderedSample { color, alpha, depth }
    }
}

/// One-shot render: prepare + forward.
pub fn rasterize(
    scene: &GaussianScene,
    cam: &CameraModel,
    pose: &Pose,
    background: Vector3<f64>,
) -> Result<RenderedSample, RasterizeError> {
    Ok(prepare(scene, cam, pose, None)?.forward(scene, background))
}

/// One-shot render restricted to masked pixels.
pub fn rasterize_masked(
    scene: &GaussianScene,
    cam: &CameraModel,
    pose: &Pose,
    background: Vector3<f64>,
    mask: &[bool],
) -> Result<RenderedSample, RasterizeError> {
    Ok(prepare(scene, cam, pose, Some(mask))?.forward(scene, background))
}

/// One-shot analytic gradient of `sum(upstream ⊙ rendered color)`.
pub fn rasterize_backward(
    scene: &GaussianScene,
    cam: &CameraModel,
    pose: &Pose,
    background: Vector3<f64>,
    upstream: &ImageRgb,
) -> Result<GradientBuffer, RasterizeError> {
    let prep = prepare(scene, cam, pose, None)?;
    let mut grads = GradientBuffer::zeros(scene.len());
    prep.backward_into(scene, background, upstream, &mut grads)?;
    Ok(grads)
}
