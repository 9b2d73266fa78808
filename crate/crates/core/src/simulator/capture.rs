//! The forward sensor model: auto exposure, rolling-shutter image formation
//! from the true trajectory, shot noise, pose degradation, and dataset
//! writing.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{CameraDescription, CaptureDataset, Manifest};
use super::motion::MotionProfile;
use super::SimulatorError;
use crate::geometry::{
    write_meta_file, CameraModel, DepthAnchor, FrameMeta, IndexRatioImage, Pose, Trajectory,
};
use crate::image_buf::ImageMono;
use crate::image_formation::{
    apply_shot_noise, form_image_with_context, plan_motion_samples, FormationConfig,
    FormationMode, MotionSamplePlan, PixelMaps,
};
use crate::scene::{decompress_radiance, save_point_cloud, GaussianScene};

/// Mean linear luminance the exposure controller drives toward.
pub const AUTO_EXPOSURE_TARGET: f64 = 0.18;
pub const DEFAULT_READOUT_S: f64 = 16e-3;
pub const DEFAULT_EXPOSURE_CAP_S: f64 = 2e-3;
pub const DEFAULT_FRAME_RATE_HZ: f64 = 10.0;

/// Largest multiplicative exposure step between consecutive frames.
const EXPOSURE_STEP_LIMIT: f64 = 16.0;
/// Bounds on the gain-times-exposure product, seconds.
const PRODUCT_BOUNDS: (f64, f64) = (1e-7, 10.0);
/// Cap on per-frame depth anchors written to the dataset.
const MAX_ANCHORS_PER_FRAME: usize = 192;
/// Cap on points written to the initialization point cloud.
const MAX_CLOUD_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ExposurePolicy {
    Fixed { t_e: f64 },
    /// Servo on the recorded (saturation-clipped) mean luminance with one
    /// frame of latency; exposure saturates at `cap` and the remaining
    /// demand is realized as analog gain.
    Auto { cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels of the rectified pinhole output.
    pub focal: f64,
    /// First-to-last-row readout time, seconds.
    pub readout: f64,
    pub exposure: ExposurePolicy,
    /// Vignette attenuation at the image corner, in (0, 1].
    pub vignette_corner: f64,
    /// Photons per unit linear radiance for shot noise; 0 disables noise.
    pub photons_per_unit: f64,
    pub frame_rate: f64,
}

impl SensorProfile {
    pub fn new(width: usize, height: usize, focal: f64) -> Self {
        Self {
            width,
            height,
            focal,
            readout: DEFAULT_READOUT_S,
            exposure: ExposurePolicy::Auto { cap: DEFAULT_EXPOSURE_CAP_S },
            vignette_corner: 0.75,
            photons_per_unit: 0.0,
            frame_rate: DEFAULT_FRAME_RATE_HZ,
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |what: String| Err(SimulatorError::BadParams { what });
        if self.width < 8 || self.height < 8 {
            return bad(format!("resolution {}x{} too small", self.width, self.height));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return bad(format!("focal {} must be positive", self.focal));
        }
        if !(self.readout >= 0.0 && self.readout.is_finite()) {
            return bad(format!("readout {} must be >= 0", self.readout));
        }
        match self.exposure {
            ExposurePolicy::Fixed { t_e } if !(t_e > 0.0 && t_e.is_finite()) => {
                return bad(format!("fixed exposure {t_e} must be positive"));
            }
            ExposurePolicy::Auto { cap } if !(cap > 0.0 && cap.is_finite()) => {
                return bad(format!("exposure cap {cap} must be positive"));
            }
            _ => {}
        }
        if !(self.vignette_corner > 0.0 && self.vignette_corner <= 1.0) {
            return bad(format!("corner vignette {} must be in (0, 1]", self.vignette_corner));
        }
        if !(self.photons_per_unit >= 0.0 && self.photons_per_unit.is_finite()) {
            return bad(format!("photons per unit {} must be >= 0", self.photons_per_unit));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!("frame rate {} must be positive", self.frame_rate));
        }
        Ok(())
    }

    /// Radial vignette falling from 1 at the principal point to
    /// `vignette_corner` at the farthest image corner.
    fn vignette(&self, camera: &CameraModel) -> ImageMono {
        let mut img = ImageMono::zeros(self.width, self.height);
        let r_corner = camera.cx.hypot(camera.cy).max(1.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let r = (x as f64 - camera.cx).hypot(y as f64 - camera.cy) / r_corner;
                img.data[y * self.width + x] = 1.0 - (1.0 - self.vignette_corner) * r * r;
            }
        }
        img
    }
}

/// Pose-file corruption emulating pre-calibration trajectory error: a
/// random-walk attitude/position drift plus a constant timestamp offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDegradation {
    /// Std-dev of each knot-to-knot attitude random-walk step, degrees.
    pub rotation_walk_deg: f64,
    /// Std-dev of each knot-to-knot translation random-walk step, millimeters.
    pub translation_walk_mm: f64,
    /// Constant offset added to the pose timestamps consumers see, milliseconds.
    pub time_offset_ms: f64,
}

impl PoseDegradation {
    pub fn none() -> Self {
        Self { rotation_walk_deg: 0.0, translation_walk_mm: 0.0, time_offset_ms: 0.0 }
    }

    pub fn is_none(&self) -> bool {
        self.rotation_walk_deg == 0.0
            && self.translation_walk_mm == 0.0
            && self.time_offset_ms == 0.0
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let ok = self.rotation_walk_deg >= 0.0
            && self.translation_walk_mm >= 0.0
            && self.rotation_walk_deg.is_finite()
            && self.translation_walk_mm.is_finite()
            && self.time_offset_ms.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SimulatorError::BadParams {
                what: "degradation noise must be finite and non-negative".into(),
            })
        }
    }
}

/// A fully-zero degradation returns a bit-exact copy of the trajectory.
pub(crate) fn degrade_trajectory(
    traj: &Trajectory,
    degradation: &PoseDegradation,
    seed: u64,
) -> Trajectory {
    if degradation.is_none() {
        return traj.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_r = degradation.rotation_walk_deg.to_radians();
    let sigma_t = degradation.translation_walk_mm / 1000.0;
    let offset = degradation.time_offset_ms / 1000.0;
    let mut walk_r = Vector3::zeros();
    let mut walk_t = Vector3::zeros();
    let mut randn3 = |scale: f64| {
        Vector3::new(
            scale * rng.sample::<f64, _>(StandardNormal),
            scale * rng.sample::<f64, _>(StandardNormal),
            scale * rng.sample::<f64, _>(StandardNormal),
        )
    };
    let knots = traj
        .knots()
        .map(|(t, pose)| {
            walk_r += randn3(sigma_r);
            walk_t += randn3(sigma_t);
            let rotation = if sigma_r > 0.0 {
                nalgebra::UnitQuaternion::from_scaled_axis(walk_r) * pose.rotation
            } else {
                pose.rotation
            };
            (t + offset, Pose::new(rotation, pose.translation + walk_t))
        })
        .collect();
    Trajectory::new(knots).expect("time shift preserves knot ordering")
}

/// One frame's auto-exposure split of the gain-times-exposure product.
fn split_exposure(product: f64, policy: ExposurePolicy) -> (f64, f64) {
    match policy {
        ExposurePolicy::Fixed { t_e } => (t_e, 1.0),
        ExposurePolicy::Auto { cap } => {
            if product <= cap {
                (product, 1.0)
            } else {
                (cap, product / cap)
            }
        }
    }
}

/// Project a subsample of the scene's means through the pose at `t0` and
/// keep the ones landing inside the image with positive depth.
fn frame_anchors(
    scene: &GaussianScene,
    camera: &CameraModel,
    traj: &Trajectory,
    t0: f64,
) -> Result<Vec<DepthAnchor>, SimulatorError> {
    let pose = traj.query_pose(t0)?;
    let stride = scene.len().div_ceil(MAX_ANCHORS_PER_FRAME).max(1);
    let mut anchors = Vec::new();
    for i in (0..scene.len()).step_by(stride) {
        let p_cam = pose.inverse_transform_point(&scene.means[i]);
        if p_cam.z <= 0.05 {
            continue;
        }
        if let Some((u, v)) = camera.project(&p_cam) {
            let in_bounds = u >= 0.0
                && u <= (camera.width - 1) as f64
                && v >= 0.0
                && v <= (camera.height - 1) as f64;
            if in_bounds {
                anchors.push(DepthAnchor { u, v, depth: p_cam.z });
            }
        }
    }
    Ok(anchors)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SimulatorError + '_ {
    move |source| SimulatorError::Io { path: path.display().to_string(), source }
}

/// Write sparse depth anchors as `u v depth_m` rows.
pub fn write_anchor_file(path: &Path, anchors: &[DepthAnchor]) -> Result<(), SimulatorError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for a in anchors {
        writeln!(w, "{} {} {}", a.u, a.v, a.depth).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Derive an independent per-purpose RNG stream from the capture seed.
fn sub_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

/// Simulate a capture of `scene` and write the dataset to `dir`, replacing
/// any frames from a previous run. Returns the dataset re-read through the
/// loader, so everything the caller sees round-tripped through the files.
pub fn capture(
    scene: &GaussianScene,
    motion: &MotionProfile,
    sensor: &SensorProfile,
    degradation: &PoseDegradation,
    seed: u64,
    dir: &Path,
) -> Result<CaptureDataset, SimulatorError> {
    sensor.validate()?;
    degradation.validate()?;
    if scene.is_empty() {
        return Err(SimulatorError::BadParams { what: "capture needs a non-empty scene".into() });
    }
    scene.check_finite()?;
    let trajectory = motion.generate()?;
    let num_frames = (motion.duration * sensor.frame_rate).floor() as usize;
    if num_frames == 0 {
        return Err(SimulatorError::BadParams {
            what: format!(
                "duration {} s at {} Hz yields no frames",
                motion.duration, sensor.frame_rate
            ),
        });
    }

    let camera = CameraModel::pinhole(sensor.focal, sensor.width, sensor.height);
    for sub in ["images", "images_clean", "sparse_depth"] {
        let p = dir.join(sub);
        match std::fs::remove_dir_all(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io_err(&p)(e)),
            _ => {}
        }
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }

    // Write the pixel maps first and form through their decoded values, so
    // captured images and every later consumer share identical maps.
    let ratio_path = dir.join("index_ratio.png");
    IndexRatioImage::identity(sensor.width, sensor.height, false)
        .encode8()
        .save(&ratio_path)
        .map_err(crate::image_buf::ImageIoError::from)?;
    let vignette_path = dir.join("vignette.png");
    sensor.vignette(&camera).save_png16(&vignette_path)?;
    let ratio = IndexRatioImage::decode8(
        &image::open(&ratio_path)
            .map_err(crate::image_buf::ImageIoError::from)?
            .to_luma8(),
    );
    let vignette = ImageMono::load_png16(&vignette_path)?;
    let maps = PixelMaps::new(ratio, vignette)?;

    let formation = FormationConfig::default();
    let min_samples = (sensor.height / 8).max(1);
    let mut product = match sensor.exposure {
        ExposurePolicy::Fixed { t_e } => t_e,
        ExposurePolicy::Auto { .. } => formation.t_e_ref,
    };
    let mut metas = Vec::with_capacity(num_frames);
    let mut empty_frames = 0usize;
    for k in 0..num_frames {
        let t0 = k as f64 / sensor.frame_rate;
        let (t_e, gain) = split_exposure(product, sensor.exposure);
        let meta = FrameMeta {
            frame_id: k as u64,
            t0,
            readout: sensor.readout,
            exposure: t_e,
            gain,
        };
        let anchors = frame_anchors(scene, &camera, &trajectory, t0)?;
        let planned = plan_motion_samples(&trajectory, &camera, &meta, &anchors, &formation)?;
        let plan = if planned.len() < min_samples {
            MotionSamplePlan::uniform(&meta, min_samples)
        } else {
            planned
        };
        let ctx = form_image_with_context(
            scene,
            &trajectory,
            &camera,
            &meta,
            &maps,
            &plan,
            FormationMode::Full,
            &formation,
        )?;

        // Meter the recorded brightness: linear luminance clipped at the
        // sensor's saturation point, averaged over valid pixels. Metering
        // the clipped signal keeps the servo honest about what actually
        // lands in the image once highlights start to saturate.
        let (mut lum_sum, mut lum_n, mut lum_max) = (0.0f64, 0usize, 0.0f64);
        for (i, &ok) in ctx.formed().valid.iter().enumerate() {
            if ok {
                let px = &ctx.linear().data[3 * i..3 * i + 3];
                let l = (px[0].min(1.0) + px[1].min(1.0) + px[2].min(1.0)) / 3.0;
                lum_sum += l;
                lum_n += 1;
                lum_max = lum_max.max(l);
            }
        }
        if lum_max < 1e-9 {
            empty_frames += 1;
        }

        let clean = ctx.formed();
        let name = format!("{:06}.png", k);
        clean.pixels.save_png8(&dir.join("images_clean").join(&name))?;
        if sensor.photons_per_unit > 0.0 {
            let noisy = apply_shot_noise(
                clean,
                scene.gamma,
                gain,
                sensor.photons_per_unit,
                sub_seed(seed, k as u64),
            );
            noisy.pixels.save_png8(&dir.join("images").join(&name))?;
        } else {
            clean.pixels.save_png8(&dir.join("images").join(&name))?;
        }
        write_anchor_file(&dir.join("sparse_depth").join(format!("{:06}.txt", k)), &anchors)?;

        if let ExposurePolicy::Auto { .. } = sensor.exposure {
            let mean = lum_sum / lum_n.max(1) as f64;
            let step = (AUTO_EXPOSURE_TARGET / mean.max(1e-6))
                .clamp(1.0 / EXPOSURE_STEP_LIMIT, EXPOSURE_STEP_LIMIT);
            product = (product * step).clamp(PRODUCT_BOUNDS.0, PRODUCT_BOUNDS.1);
        }
        metas.push(meta);
    }

    write_meta_file(&dir.join("meta.txt"), &metas)?;
    trajectory.to_file(&dir.join("trajectory_gt.txt"))?;
    let degraded = degrade_trajectory(&trajectory, degradation, sub_seed(seed, 0xDE64));
    degraded.to_file(&dir.join("trajectory.txt"))?;

    let description = CameraDescription {
        camera,
        gamma: scene.gamma,
        radiance_scale: scene.radiance_scale,
        t_e_ref: formation.t_e_ref,
    };
    let cam_path = dir.join("camera.json");
    let cam_file = std::fs::File::create(&cam_path).map_err(io_err(&cam_path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(cam_file), &description)
        .map_err(|source| SimulatorError::Json { path: cam_path.display().to_string(), source })?;

    // Point-cloud files carry linear radiance; scene colors are stored
    // response-compressed, so decompress (clamping the unconstrained
    // storage at zero) before writing.
    let stride = scene.len().div_ceil(MAX_CLOUD_POINTS).max(1);
    let points: Vec<(Vector3<f64>, [f64; 3])> = (0..scene.len())
        .step_by(stride)
        .map(|i| {
            let lin = scene.colors[i].map(|c| decompress_radiance(c.max(0.0), scene.gamma));
            (scene.means[i], [lin.x, lin.y, lin.z])
        })
        .collect();
    save_point_cloud(&dir.join("points.txt"), &points)?;

    let manifest = Manifest {
        seed,
        num_frames,
        empty_frames,
        gaussians: scene.len(),
        width: sensor.width,
        height: sensor.height,
        motion: *motion,
        sensor: *sensor,
        degradation: *degradation,
    };
    manifest.write(&dir.join("manifest"))?;

    CaptureDataset::load(dir)
}
