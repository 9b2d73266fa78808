//! Physical image formation on top of the rasterizer.
//!
//! A rolling-shutter frame is formed by rasterizing the scene at N pose
//! samples spanning the capture bracket `[t0, t0 + readout + exposure]`,
//! gathering per pixel the samples covered by that pixel's own capture
//! window, averaging them in linear radiance, applying the per-pixel weight
//! ω(u) = gain · vignette · scene-scale · exposure-normalization, and
//! finally the response curve φ(x) = x^(1/γ) with a [0,1] clamp.

mod noise;

pub use noise::apply_shot_noise;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{
    CameraModel, DepthAnchor, FrameMeta, GeometryError, IndexRatioImage, Trajectory,
};
use crate::image_buf::{ImageMono, ImageRgb};
use crate::rasterizer::{self, GradientBuffer, PreparedRaster, RasterizeError};
use crate::scene::GaussianScene;

#[derive(Debug, Error)]
pub enum FormationError {
    #[error(
        "trajectory domain [{domain_lo}, {domain_hi}] does not cover capture bracket [{lo}, {hi}]"
    )]
    TrajectoryTooShort { lo: f64, hi: f64, domain_lo: f64, domain_hi: f64 },
    #[error("{what} is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    MapSizeMismatch { what: &'static str, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("sample plan does not match the frame: {reason}")]
    PlanMismatch { reason: &'static str },
    #[error("invalid formation config: {reason}")]
    BadConfig { reason: &'static str },
    #[error("upstream gradient image is {got_w}x{got_h}, formed image is {want_w}x{want_h}")]
    UpstreamSizeMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error(transparent)]
    Raster(#[from] RasterizeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rectified per-pixel lookup maps consumed by image formation: the
/// index-ratio image R(u) (with its validity mask) and the vignette V(u).
#[derive(Debug, Clone)]
pub struct PixelMaps {
    pub ratio: IndexRatioImage,
    pub vignette: ImageMono,
}

impl PixelMaps {
    pub fn new(ratio: IndexRatioImage, vignette: ImageMono) -> Result<Self, FormationError> {
        if vignette.width != ratio.width || vignette.height != ratio.height {
            return Err(FormationError::MapSizeMismatch {
                what: "vignette",
                got_w: vignette.width,
                got_h: vignette.height,
                want_w: ratio.width,
                want_h: ratio.height,
            });
        }
        Ok(Self { ratio, vignette })
    }

    /// Identity maps: ratio of an unrectified sensor, vignette ≡ 1.
    pub fn uniform(width: usize, height: usize, readout_reversed: bool) -> Self {
        Self {
            ratio: IndexRatioImage::identity(width, height, readout_reversed),
            vignette: ImageMono::filled(width, height, 1.0),
        }
    }

    pub fn width(&self) -> usize {
        self.ratio.width
    }

    pub fn height(&self) -> usize {
        self.ratio.height
    }

    pub fn valid(&self) -> &[bool] {
        &self.ratio.valid
    }
}

/// Formation settings that are dataset constants rather than per-frame values.
#[derive(Debug, Clone)]
pub struct FormationConfig {
    /// Reference exposure for the normalization factor t_e / t_e_ref.
    pub t_e_ref: f64,
    /// Motion-sample cap.
    pub max_samples: usize,
    /// Motion-sampling median reprojection threshold in pixels.
    pub threshold_px: f64,
    /// Rasterization background in stored color space.
    pub background: Vector3<f64>,
}

impl Default for FormationConfig {
    fn default() -> Self {
        Self {
            t_e_ref: 1e-3,
            max_samples: 16,
            threshold_px: 1.0,
            background: Vector3::new(0.0, 0.0, 0.0),
        }
    }
}

impl FormationConfig {
    fn validate(&self) -> Result<(), FormationError> {
        if !(self.t_e_ref > 0.0) {
            return Err(FormationError::BadConfig { reason: "t_e_ref must be positive" });
        }
        if self.max_samples == 0 {
            return Err(FormationError::BadConfig { reason: "max_samples must be >= 1" });
        }
        if !(self.threshold_px > 0.0) {
            return Err(FormationError::BadConfig { reason: "threshold_px must be positive" });
        }
        if self.background.iter().any(|v| !(*v >= 0.0)) {
            return Err(FormationError::BadConfig { reason: "background must be non-negative" });
        }
        Ok(())
    }
}

/// Pose sample times covering one frame's capture bracket, plus the
/// assignment arithmetic mapping a pixel's capture window onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSamplePlan {
    /// Sub-bracket center times, sorted ascending.
    pub times: Vec<f64>,
    pub t0: f64,
    pub readout: f64,
    pub exposure: f64,
}

impl MotionSamplePlan {
    /// Single-sample plan at the bracket midpoint (the quasi-static case).
    pub fn single(meta: &FrameMeta) -> Self {
        Self::uniform(meta, 1)
    }

    /// N samples at the centers of N equal sub-brackets.
    pub fn uniform(meta: &FrameMeta, n: usize) -> Self {
        assert!(n >= 1, "a plan needs at least one sample");
        let bracket = meta.readout + meta.exposure;
        let delta = bracket / n as f64;
        let times = (0..n).map(|k| meta.t0 + (k as f64 + 0.5) * delta).collect();
        Self { times, t0: meta.t0, readout: meta.readout, exposure: meta.exposure }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn bracket(&self) -> f64 {
        self.readout + self.exposure
    }

    /// Inclusive sample-index range assigned to a pixel with row ratio
    /// `ratio`: the sample nearest to the middle of the pixel's exposure
    /// window (ties to the earlier sample), widened to every covered sample
    /// when the exposure spans at least two sample intervals.
    pub fn assigned_range(&self, ratio: f64) -> (usize, usize) {
        let n = self.times.len();
        if n == 1 {
            return (0, 0);
        }
        let delta = self.bracket() / n as f64;
        let start = ratio * self.readout;
        let clamp = |k: f64| (k.max(0.0) as usize).min(n - 1);
        if self.exposure >= 2.0 * delta {
            let lo = clamp((start / delta - 0.5).ceil());
            let hi = clamp(((start + self.exposure) / delta - 0.5).floor());
            (lo.min(hi), hi.max(lo))
        } else {
            let mid = start + 0.5 * self.exposure;
            let k = clamp((mid / delta - 0.5 - 0.5).ceil());
            (k, k)
        }
    }

    fn matches(&self, meta: &FrameMeta) -> Result<(), FormationError> {
        if self.times.is_empty() {
            return Err(FormationError::PlanMismatch { reason: "plan has no samples" });
        }
        if self.t0 != meta.t0 || self.readout != meta.readout || self.exposure != meta.exposure {
            return Err(FormationError::PlanMismatch {
                reason: "plan was built for different frame timing",
            });
        }
        Ok(())
    }
}

fn check_bracket_covered(traj: &Trajectory, meta: &FrameMeta) -> Result<(), FormationError> {
    let (lo, hi) = meta.bracket();
    let (dlo, dhi) = traj.domain();
    if lo < dlo || hi > dhi {
        return Err(FormationError::TrajectoryTooShort {
            lo,
            hi,
            domain_lo: dlo,
            domain_hi: dhi,
        });
    }
    Ok(())
}

/// Find the smallest N (capped) such that within each of the N equal
/// sub-brackets the median reprojected-pixel displacement stays strictly
/// below the threshold; sample times are the sub-bracket centers. Without
/// usable depth anchors, falls back to a rotation-angle bound.
pub fn plan_motion_samples(
    traj: &Trajectory,
    cam: &CameraModel,
    meta: &FrameMeta,
    anchors: &[DepthAnchor],
    config: &FormationConfig,
) -> Result<MotionSamplePlan, FormationError> {
    config.validate()?;
    meta.validate()?;
    check_bracket_covered(traj, meta)?;
    let bracket = meta.readout + meta.exposure;
    let threshold = config.threshold_px;

    let sub_bracket_ok = |n: usize| -> Result<bool, FormationError> {
        let delta = bracket / n as f64;
        for i in 0..n {
            let a = meta.t0 + i as f64 * delta;
            let b = meta.t0 + (i + 1) as f64 * delta;
            let measure = if anchors.is_empty() {
                // Angle bound: a pure rotation of θ moves a principal-axis
                // pixel by ≈ focal · θ.
                let pa = traj.query_pose(a)?;
                let pb = traj.query_pose(b)?;
                cam.focal * pa.rotation.angle_to(&pb.rotation)
            } else {
                let disp = crate::geometry::reprojection_displacements(traj, cam, anchors, (a, b))?;
                if disp.magnitudes.is_empty() {
                    // Every anchor left the view: treat like the no-anchor case.
                    let pa = traj.query_pose(a)?;
                    let pb = traj.query_pose(b)?;
                    cam.focal * pa.rotation.angle_to(&pb.rotation)
                } else {
                    crate::stats::median(&disp.magnitudes)
                }
            };
            if !(measure < threshold) {
                return Ok(false);
            }
        }
        Ok(true)
    };

    let mut n = 1;
    while n < config.max_samples && !sub_bracket_ok(n)? {
        n += 1;
    }
    Ok(MotionSamplePlan::uniform(meta, n))
}

/// Which formation pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormationMode {
    /// Rolling-shutter-aware multi-sample formation with gamma response.
    Full,
    /// One pose at the frame-center time; reproduces a formation model with
    /// no motion sampling.
    CenterRowOnly,
    /// Multi-sample formation with γ = 1 end to end (linear storage).
    NoGamma,
}

/// Response-space output of image formation: values in [0,1], with the
/// rectification validity mask. Invalid pixels hold 0 and must be excluded
/// from losses and metrics.
#[derive(Debug, Clone)]
pub struct FormedImage {
    pub pixels: ImageRgb,
    pub valid: Vec<bool>,
}

/// Everything the backward pass needs from a forward formation.
pub struct FormationContext {
    preps: Vec<PreparedRaster>,
    composites: Vec<ImageRgb>,
    /// Per-pixel inclusive assigned sample range (garbage on invalid pixels).
    assign_lo: Vec<u32>,
    assign_hi: Vec<u32>,
    /// Per-pixel weight ω(u).
    weight: ImageMono,
    /// Pre-response weighted linear image x(u).
    linear: ImageRgb,
    formed: FormedImage,
    gamma: f64,
    radiance_scale: f64,
    background: Vector3<f64>,
}

/// Per-pixel weight ω(u) = gain · V(u) · s · (t_e / t_e_ref); zero on
/// invalid pixels.
pub fn weight_map(
    meta: &FrameMeta,
    maps: &PixelMaps,
    radiance_scale: f64,
    t_e_ref: f64,
) -> ImageMono {
    let mut out = ImageMono::zeros(maps.width(), maps.height());
    let norm = meta.exposure / t_e_ref;
    for i in 0..out.data.len() {
        if maps.ratio.valid[i] {
            out.data[i] = meta.gain * maps.vignette.data[i] * radiance_scale * norm;
        }
    }
    out
}

fn effective_gamma(scene: &GaussianScene, mode: FormationMode) -> f64 {
    match mode {
        FormationMode::NoGamma => 1.0,
        _ => scene.gamma,
    }
}

/// Form one frame. See the module docs for the pipeline; `mode` selects the
/// full model, the single-pose variant, or the γ=1 variant.
pub fn form_image(
    scene: &GaussianScene,
    traj: &Trajectory,
    cam: &CameraModel,
    meta: &FrameMeta,
    maps: &PixelMaps,
    plan: &MotionSamplePlan,
    mode: FormationMode,
    config: &FormationConfig,
) -> Result<FormedImage, FormationError> {
    form_image_with_context(scene, traj, cam, meta, maps, plan, mode, config)
        .map(|ctx| ctx.formed)
}

/// Like `form_image` but returns the full context for a backward pass.
#[allow(clippy::too_many_arguments)]
pub fn form_image_with_context(
    scene: &GaussianScene,
    traj: &Trajectory,
    cam: &CameraModel,
    meta: &FrameMeta,
    maps: &PixelMaps,
    plan: &MotionSamplePlan,
    mode: FormationMode,
    config: &FormationConfig,
) -> Result<FormationContext, FormationError> {
    config.validate()?;
    meta.validate()?;
    plan.matches(meta)?;
    if maps.width() != cam.width || maps.height() != cam.height {
        return Err(FormationError::MapSizeMismatch {
            what: "pixel maps",
            got_w: maps.width(),
            got_h: maps.height(),
            want_w: cam.width,
            want_h: cam.height,
        });
    }
    check_bracket_covered(traj, meta)?;

    let (w, h) = (cam.width, cam.height);
    let px_count = w * h;
    let gamma = effective_gamma(scene, mode);

    // Per-pixel sample assignment and per-sample pixel masks. Restricting
    // each sample's rasterization to its assigned pixels keeps the total
    // work near one full-frame render regardless of N.
    let (times, assign_lo, assign_hi) = match mode {
        FormationMode::CenterRowOnly => {
            let t = meta.t0 + 0.5 * meta.readout + 0.5 * meta.exposure;
            (vec![t], vec![0u32; px_count], vec![0u32; px_count])
        }
        FormationMode::Full | FormationMode::NoGamma => {
            let mut lo = vec![0u32; px_count];
            let mut hi = vec![0u32; px_count];
            for i in 0..px_count {
                if maps.ratio.valid[i] {
                    let (a, b) = plan.assigned_range(maps.ratio.values[i]);
                    lo[i] = a as u32;
                    hi[i] = b as u32;
                }
            }
            (plan.times.clone(), lo, hi)
        }
    };

    let mut preps = Vec::with_capacity(times.len());
    let mut composites = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let mut mask = vec![false; px_count];
        let mut any = false;
        for i in 0..px_count {
            if maps.ratio.valid[i]
                && (assign_lo[i] as usize) <= k
                && k <= (assign_hi[i] as usize)
            {
                mask[i] = true;
                any = true;
            }
        }
        let pose = traj.query_pose(t)?;
        let prep = rasterizer::prepare(scene, cam, &pose, Some(&mask))?;
        let composite = if any {
            prep.forward(scene, config.background).color
        } else {
            ImageRgb::filled(w, h, config.background.into())
        };
        preps.push(prep);
        composites.push(composite);
    }

    let weight = weight_map(meta, maps, scene.radiance_scale, config.t_e_ref);
    let mut linear = ImageRgb::zeros(w, h);
    let mut pixels = ImageRgb::zeros(w, h);
    let inv_gamma = 1.0 / gamma;
    for i in 0..px_count {
        if !maps.ratio.valid[i] {
            continue;
        }
        let (lo, hi) = (assign_lo[i] as usize, assign_hi[i] as usize);
        let count = (hi - lo + 1) as f64;
        for ch in 0..3 {
            let mut acc = 0.0;
            for composite in &composites[lo..=hi] {
                acc += composite.data[3 * i + ch].max(0.0).powf(gamma);
            }
            let x = weight.data[i] * (acc / count);
            linear.data[3 * i + ch] = x;
            pixels.data[3 * i + ch] = x.powf(inv_gamma).clamp(0.0, 1.0);
        }
    }

    Ok(FormationContext {
        preps,
        composites,
        assign_lo,
        assign_hi,
        weight,
        linear,
        formed: FormedImage { pixels, valid: maps.ratio.valid.clone() },
        gamma,
        radiance_scale: scene.radiance_scale,
        background: config.background,
    })
}

impl FormationContext {
    pub fn formed(&self) -> &FormedImage {
        &self.formed
    }

    /// Pre-response linear image x(u) = ω(u) · mean of assigned linear
    /// radiance samples.
    pub fn linear(&self) -> &ImageRgb {
        &self.linear
    }

    pub fn weight(&self) -> &ImageMono {
        &self.weight
    }

    /// Accumulate gradients of `sum(upstream ⊙ formed pixels)` with respect
    /// to every scene parameter (including the radiance scale) into `grads`.
    /// Invalid pixels are skipped regardless of upstream values.
    pub fn backward_into(
        &self,
        scene: &GaussianScene,
        upstream: &ImageRgb,
        grads: &mut GradientBuffer,
    ) -> Result<(), FormationError> {
        let img = &self.formed.pixels;
        if upstream.width != img.width || upstream.height != img.height {
            return Err(FormationError::UpstreamSizeMismatch {
                got_w: upstream.width,
                got_h: upstream.height,
                want_w: img.width,
                want_h: img.height,
            });
        }
        let px_count = img.width * img.height;
        let mut up_samples: Vec<ImageRgb> =
            (0..self.preps.len()).map(|_| ImageRgb::zeros(img.width, img.height)).collect();
        let mut d_scale = 0.0;
        for i in 0..px_count {
            if !self.formed.valid[i] {
                continue;
            }
            let (lo, hi) = (self.assign_lo[i] as usize, self.assign_hi[i] as usize);
            let count = (hi - lo + 1) as f64;
            for ch in 0..3 {
                let up = upstream.data[3 * i + ch];
                if up == 0.0 {
                    continue;
                }
                let x = self.linear.data[3 * i + ch];
                let y = img.data[3 * i + ch];
                // Response derivative dy/dx = y / (γ x); blocked at the
                // [0,1] clamp and at x = 0 where φ is not differentiable.
                if !(x > 0.0) || y <= 0.0 || y >= 1.0 {
                    continue;
                }
                let d_x = up * y / (self.gamma * x);
                d_scale += d_x * x / self.radiance_scale;
                let d_mean = d_x * self.weight.data[i];
                let d_each = d_mean / count;
                for (k, composite) in self.composites[lo..=hi].iter().enumerate() {
                    let c = composite.data[3 * i + ch].max(0.0);
                    // d(c^γ)/dc, with the render-time non-negativity clamp.
                    let d_c = if composite.data[3 * i + ch] > 0.0 {
                        d_each * self.gamma * c.powf(self.gamma - 1.0)
                    } else {
                        0.0
                    };
                    up_samples[lo + k].data[3 * i + ch] += d_c;
                }
            }
        }
        for (prep, up) in self.preps.iter().zip(&up_samples) {
            prep.backward_into(scene, self.background, up, grads)?;
        }
        grads.radiance_scale += d_scale;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
