//! Capture dataset layout, loading, and conversion to a training set.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::capture::{PoseDegradation, SensorProfile};
use super::motion::MotionProfile;
use super::SimulatorError;
use crate::geometry::{read_meta_file, CameraModel, DepthAnchor, FrameMeta, IndexRatioImage, Trajectory};
use crate::image_buf::{ImageIoError, ImageMono, ImageRgb};
use crate::image_formation::PixelMaps;
use crate::optimizer::{TrainFrame, TrainingSet};
use crate::scene::load_point_cloud;

/// Sidecar describing the rectified camera and the response/normalization
/// constants needed to reproduce the captured images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraDescription {
    pub camera: CameraModel,
    /// Response-curve exponent of the stored images.
    pub gamma: f64,
    /// Global radiance scale the capture was rendered with.
    pub radiance_scale: f64,
    /// Reference exposure for the weight normalization, seconds.
    pub t_e_ref: f64,
}

/// Seeds and profile echo identifying a capture run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub num_frames: usize,
    pub empty_frames: usize,
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub motion: MotionProfile,
    pub sensor: SensorProfile,
    pub degradation: PoseDegradation,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<(), SimulatorError> {
        let file = std::fs::File::create(path)
            .map_err(|source| SimulatorError::Io { path: path.display().to_string(), source })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)
            .map_err(|source| SimulatorError::Json { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self, SimulatorError> {
        let file = std::fs::File::open(path)
            .map_err(|source| SimulatorError::Io { path: path.display().to_string(), source })?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|source| SimulatorError::Json { path: path.display().to_string(), source })
    }
}

/// An on-disk capture opened for reading. Pixel maps, trajectories, and
/// frame metadata are held in memory; images and anchors load per frame.
#[derive(Debug, Clone)]
pub struct CaptureDataset {
    pub dir: PathBuf,
    pub camera: CameraModel,
    pub gamma: f64,
    pub radiance_scale: f64,
    pub t_e_ref: f64,
    pub metas: Vec<FrameMeta>,
    /// The trajectory consumers see (degraded by the capture profile).
    pub trajectory: Trajectory,
    pub trajectory_gt: Trajectory,
    pub maps: PixelMaps,
    pub manifest: Manifest,
}

impl CaptureDataset {
    pub fn load(dir: &Path) -> Result<Self, SimulatorError> {
        let bad = |what: String| SimulatorError::BadDataset {
            dir: dir.display().to_string(),
            what,
        };
        let manifest = Manifest::read(&dir.join("manifest"))?;

        let cam_path = dir.join("camera.json");
        let cam_file = std::fs::File::open(&cam_path)
            .map_err(|source| SimulatorError::Io { path: cam_path.display().to_string(), source })?;
        let description: CameraDescription =
            serde_json::from_reader(std::io::BufReader::new(cam_file)).map_err(|source| {
                SimulatorError::Json { path: cam_path.display().to_string(), source }
            })?;
        let camera = description.camera.clone();
        if camera.width != manifest.width || camera.height != manifest.height {
            return Err(bad(format!(
                "camera resolution {}x{} disagrees with manifest {}x{}",
                camera.width, camera.height, manifest.width, manifest.height
            )));
        }

        let metas = read_meta_file(&dir.join("meta.txt"))?;
        if metas.len() != manifest.num_frames {
            return Err(bad(format!(
                "meta.txt has {} frames, manifest promises {}",
                metas.len(),
                manifest.num_frames
            )));
        }
        for (k, meta) in metas.iter().enumerate() {
            if meta.frame_id != k as u64 {
                return Err(bad(format!("frame {k} has id {}", meta.frame_id)));
            }
            for sub in ["images", "images_clean"] {
                let p = dir.join(sub).join(format!("{:06}.png", k));
                if !p.is_file() {
                    return Err(bad(format!("missing {}", p.display())));
                }
            }
        }

        let ratio_path = dir.join("index_ratio.png");
        let ratio = IndexRatioImage::decode8(
            &image::open(&ratio_path).map_err(ImageIoError::from)?.to_luma8(),
        );
        let vignette = ImageMono::load_png16(&dir.join("vignette.png"))?;
        let maps = PixelMaps::new(ratio, vignette)?;
        if maps.width() != camera.width || maps.height() != camera.height {
            return Err(bad(format!(
                "pixel maps {}x{} disagree with camera {}x{}",
                maps.width(),
                maps.height(),
                camera.width,
                camera.height
            )));
        }

        let trajectory = Trajectory::from_file(&dir.join("trajectory.txt"))?;
        let trajectory_gt = Trajectory::from_file(&dir.join("trajectory_gt.txt"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            camera,
            gamma: description.gamma,
            radiance_scale: description.radiance_scale,
            t_e_ref: description.t_e_ref,
            metas,
            trajectory,
            trajectory_gt,
            maps,
            manifest,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.metas.len()
    }

    pub fn image_path(&self, index: usize, clean: bool) -> PathBuf {
        let sub = if clean { "images_clean" } else { "images" };
        self.dir.join(sub).join(format!("{:06}.png", index))
    }

    pub fn load_image(&self, index: usize, clean: bool) -> Result<ImageRgb, SimulatorError> {
        let path = self.image_path(index, clean);
        let img = ImageRgb::load_png8(&path)?;
        if img.width != self.camera.width || img.height != self.camera.height {
            return Err(SimulatorError::BadDataset {
                dir: self.dir.display().to_string(),
                what: format!(
                    "{} is {}x{}, camera is {}x{}",
                    path.display(),
                    img.width,
                    img.height,
                    self.camera.width,
                    self.camera.height
                ),
            });
        }
        Ok(img)
    }

    /// Read one frame's `u v depth_m` anchor rows.
    pub fn load_anchors(&self, index: usize) -> Result<Vec<DepthAnchor>, SimulatorError> {
        let path = self.dir.join("sparse_depth").join(format!("{:06}.txt", index));
        let file = std::fs::File::open(&path)
            .map_err(|source| SimulatorError::Io { path: path.display().to_string(), source })?;
        let mut anchors = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line
                .map_err(|source| SimulatorError::Io { path: path.display().to_string(), source })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> =
                trimmed.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            if fields.len() != 3 {
                return Err(SimulatorError::BadDataset {
                    dir: self.dir.display().to_string(),
                    what: format!("{} line {}: want `u v depth_m`", path.display(), lineno + 1),
                });
            }
            anchors.push(DepthAnchor { u: fields[0], v: fields[1], depth: fields[2] });
        }
        Ok(anchors)
    }

    pub fn load_points(&self) -> Result<Vec<(Vector3<f64>, [f64; 3])>, SimulatorError> {
        Ok(load_point_cloud(&self.dir.join("points.txt"))?)
    }

    /// Assemble the training inputs. `use_gt_trajectory` selects the
    /// ground-truth pose file over the degraded one consumers normally see;
    /// `clean_images` selects the noise-free targets.
    pub fn to_training_set(
        &self,
        use_gt_trajectory: bool,
        clean_images: bool,
    ) -> Result<TrainingSet, SimulatorError> {
        let mut frames = Vec::with_capacity(self.num_frames());
        for k in 0..self.num_frames() {
            frames.push(TrainFrame {
                meta: self.metas[k],
                image: self.load_image(k, clean_images)?,
                anchors: self.load_anchors(k)?,
            });
        }
        let trajectory =
            if use_gt_trajectory { &self.trajectory_gt } else { &self.trajectory }.clone();
        Ok(TrainingSet {
            camera: self.camera.clone(),
            trajectory,
            maps: self.maps.clone(),
            frames,
        })
    }
}
