//! Training loop: minimizes the photometric loss of formed images against
//! captured frames with per-group adaptive updates, an every-Nth-frame
//! holdout protocol, and ablation switches for the formation model.

mod adam;
mod loss;

pub use adam::{position_lr, Adam, GroupRates, BETA1, BETA2, EPS, LR_COLORS, LR_LOG_SCALES, LR_MEANS_FINAL, LR_MEANS_INIT, LR_OPACITIES, LR_ROTATIONS};
pub use loss::{photometric_loss, photometric_loss_prepared, LossValue};

use crate::geometry::{CameraModel, DepthAnchor, FrameMeta, Trajectory};
use crate::image_buf::ImageRgb;
use crate::image_formation::{
    form_image, form_image_with_context, plan_motion_samples, FormationConfig, FormationError,
    FormationMode, MotionSamplePlan, PixelMaps,
};
use crate::metrics::{MetricsError, SsimReference};
use crate::rasterizer::GradientBuffer;
use crate::scene::{GaussianScene, SceneError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid training config: {reason}")]
    BadConfig { reason: String },
    #[error("training set: {reason}")]
    BadTrainingSet { reason: String },
    #[error("need at least {stride} frames to split a holdout set, got {frames}")]
    TooFewFrames { frames: usize, stride: usize },
    #[error("scene has {scene} gaussians, gradients {grads}, optimizer state {state}")]
    LengthMismatch { scene: usize, grads: usize, state: usize },
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One captured frame with everything training needs about it.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub meta: FrameMeta,
    /// Response-space image in [0,1] at the camera resolution.
    pub image: ImageRgb,
    /// Sparse depth anchors used by motion-sample planning (may be empty;
    /// planning then falls back to its rotation bound).
    pub anchors: Vec<DepthAnchor>,
}

/// The trainer's input contract. Whoever assembles it (the dataset loader)
/// chooses which trajectory to supply — the VIBA-quality one or a degraded
/// one for the corresponding ablation.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub camera: CameraModel,
    pub trajectory: Trajectory,
    pub maps: PixelMaps,
    pub frames: Vec<TrainFrame>,
}

impl TrainingSet {
    fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |reason: String| Err(OptimizerError::BadTrainingSet { reason });
        if self.maps.width() != self.camera.width || self.maps.height() != self.camera.height {
            return bad(format!(
                "pixel maps {}x{} vs camera {}x{}",
                self.maps.width(),
                self.maps.height(),
                self.camera.width,
                self.camera.height
            ));
        }
        let (lo, hi) = self.trajectory.domain();
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.width != self.camera.width || f.image.height != self.camera.height {
                return bad(format!("frame {i} image size mismatch"));
            }
            f.meta.validate().map_err(FormationError::from)?;
            let (b0, b1) = f.meta.bracket();
            if b0 < lo || b1 > hi {
                return bad(format!(
                    "frame {i} bracket [{b0}, {b1}] outside trajectory domain [{lo}, {hi}]"
                ));
            }
        }
        Ok(())
    }
}

/// Training schedule, loss mix, and ablation switches.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Iteration at which per-pixel time modeling (motion-sampled formation)
    /// replaces the single mid-frame pose.
    pub rs_enable_iter: u64,
    /// Weight of the structural term in the loss.
    pub lambda: f64,
    /// Every `holdout_stride`-th frame (index ≡ 0) is held out for eval.
    pub holdout_stride: usize,
    pub eval_every: u64,
    /// Multiplies every group learning rate; 0 freezes the scene.
    pub lr_scale: f64,
    /// Echoed for reporting; honored by whoever builds the [`TrainingSet`]
    /// (true → the VIBA-quality trajectory, false → the degraded one).
    pub use_viba_trajectory: bool,
    /// False trains single-pose (mid-frame) formation for every iteration.
    pub use_motion_sampling: bool,
    /// False forces γ = 1 (linear radiance storage) for the whole run.
    pub use_scene_gamma: bool,
    pub formation: FormationConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            rs_enable_iter: 7_500,
            lambda: 0.2,
            holdout_stride: 8,
            eval_every: 1_000,
            lr_scale: 1.0,
            use_viba_trajectory: true,
            use_motion_sampling: true,
            use_scene_gamma: true,
            formation: FormationConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |reason: String| Err(OptimizerError::BadConfig { reason });
        if self.rs_enable_iter > self.iterations {
            return bad(format!(
                "rolling-shutter enable iteration {} exceeds total iterations {}",
                self.rs_enable_iter, self.iterations
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.holdout_stride < 2 {
            return bad(format!("holdout stride {} must be at least 2", self.holdout_stride));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".to_string());
        }
        if !(self.lr_scale >= 0.0) {
            return bad(format!("lr_scale {} must be non-negative", self.lr_scale));
        }
        Ok(())
    }
}

/// Frames with index ≡ 0 (mod stride) go to eval, the rest to train.
pub fn split_holdout(
    n_frames: usize,
    stride: usize,
) -> Result<(Vec<usize>, Vec<usize>), OptimizerError> {
    if stride < 2 {
        return Err(OptimizerError::BadConfig {
            reason: format!("holdout stride {stride} must be at least 2"),
        });
    }
    if n_frames < stride {
        return Err(OptimizerError::TooFewFrames { frames: n_frames, stride });
    }
    Ok((0..n_frames).partition(|i| i % stride != 0))
}

/// Holdout metrics after a given number of completed iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: u64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Everything a run reports. Wall time is the only field expected to differ
/// between reruns with identical seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Optimization steps actually applied (equals the configured count
    /// unless the run diverged).
    pub iterations: u64,
    pub evals: Vec<EvalPoint>,
    pub loss_curve: Vec<f64>,
    pub final_psnr_db: f64,
    pub final_ssim: f64,
    pub wall_seconds: f64,
    /// Gradient steps taken on holdout frames; must stay 0.
    pub holdout_gradient_contributions: u64,
    /// First iteration with a non-finite loss or gradient, if any; the
    /// returned scene is then the last evaluated checkpoint.
    pub diverged_at: Option<u64>,
    pub train_frame_ids: Vec<u64>,
    pub eval_frame_ids: Vec<u64>,
}

impl TrainReport {
    pub fn save_json(&self, path: &Path) -> Result<(), OptimizerError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)
            .map_err(|source| OptimizerError::Io { path: path.display().to_string(), source })
    }

    pub fn load_json(path: &Path) -> Result<Self, OptimizerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| OptimizerError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn ensure_plan(
    plans: &mut [Option<MotionSamplePlan>],
    i: usize,
    set: &TrainingSet,
    config: &TrainConfig,
) -> Result<(), OptimizerError> {
    if plans[i].is_none() {
        let f = &set.frames[i];
        plans[i] = Some(plan_motion_samples(
            &set.trajectory,
            &set.camera,
            &f.meta,
            &f.anchors,
            &config.formation,
        )?);
    }
    Ok(())
}

fn ensure_ssim_ref(
    refs: &mut [Option<SsimReference>],
    i: usize,
    set: &TrainingSet,
) -> Result<(), OptimizerError> {
    if refs[i].is_none() {
        refs[i] = Some(SsimReference::new(&set.frames[i].image, set.maps.valid())?);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_holdout(
    set: &TrainingSet,
    scene: &GaussianScene,
    eval_idx: &[usize],
    plans: &mut [Option<MotionSamplePlan>],
    refs: &mut [Option<SsimReference>],
    mode: FormationMode,
    config: &TrainConfig,
    iteration: u64,
) -> Result<EvalPoint, OptimizerError> {
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for &i in eval_idx {
        let frame = &set.frames[i];
        let plan = if mode == FormationMode::CenterRowOnly {
            MotionSamplePlan::single(&frame.meta)
        } else {
            ensure_plan(plans, i, set, config)?;
            plans[i].clone().expect("plan just ensured")
        };
        let formed = form_image(
            scene,
            &set.trajectory,
            &set.camera,
            &frame.meta,
            &set.maps,
            &plan,
            mode,
            &config.formation,
        )?;
        ensure_ssim_ref(refs, i, set)?;
        psnr_sum += crate::metrics::psnr(&formed.pixels, &frame.image, &formed.valid)?;
        ssim_sum += refs[i].as_ref().expect("ref just ensured").evaluate(&formed.pixels)?;
    }
    let k = eval_idx.len() as f64;
    Ok(EvalPoint { iteration, psnr_db: psnr_sum / k, ssim: ssim_sum / k })
}

/// One frame's render-vs-recorded metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_id: u64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Renders the selected frames from `scene` and scores each against its
/// recorded image — the same formation and metric path the training loop
/// uses for its holdout evaluations, exposed for standalone tools. Means of
/// the returned columns reproduce the training report's eval points exactly
/// when called with the same mode and formation settings.
pub fn score_frames(
    set: &TrainingSet,
    scene: &GaussianScene,
    indices: &[usize],
    mode: FormationMode,
    formation: &FormationConfig,
) -> Result<Vec<FrameScore>, OptimizerError> {
    set.validate()?;
    scene.check_finite()?;
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let frame = set.frames.get(i).ok_or_else(|| OptimizerError::BadTrainingSet {
            reason: format!("frame index {i} out of range ({} frames)", set.frames.len()),
        })?;
        let plan = if mode == FormationMode::CenterRowOnly {
            MotionSamplePlan::single(&frame.meta)
        } else {
            plan_motion_samples(&set.trajectory, &set.camera, &frame.meta, &frame.anchors, formation)?
        };
        let formed =
            form_image(scene, &set.trajectory, &set.camera, &frame.meta, &set.maps, &plan, mode, formation)?;
        let psnr_db = crate::metrics::psnr(&formed.pixels, &frame.image, &formed.valid)?;
        let ssim = SsimReference::new(&frame.image, set.maps.valid())?.evaluate(&formed.pixels)?;
        out.push(FrameScore { frame_id: frame.meta.frame_id, psnr_db, ssim });
    }
    Ok(out)
}

/// Runs the optimization loop and returns the trained scene plus its report.
///
/// Per iteration: sample a train frame, form it (single mid-frame pose until
/// `rs_enable_iter`, the motion-sampled model afterwards), backpropagate the
/// photometric loss through formation and rasterization, and apply one
/// adaptive step. The holdout set is evaluated before training, every
/// `eval_every` iterations, and at the end; evaluation always uses the
/// configuration's final formation model. A non-finite loss or gradient
/// aborts the run and returns the last evaluated checkpoint.
pub fn train(
    set: &TrainingSet,
    mut scene: GaussianScene,
    config: &TrainConfig,
) -> Result<(GaussianScene, TrainReport), OptimizerError> {
    config.validate()?;
    set.validate()?;
    scene.check_finite()?;
    if !config.use_scene_gamma {
        scene.gamma = 1.0;
    }
    let (train_idx, eval_idx) = split_holdout(set.frames.len(), config.holdout_stride)?;
    let mut is_eval = vec![false; set.frames.len()];
    for &i in &eval_idx {
        is_eval[i] = true;
    }
    let eval_mode = if config.use_motion_sampling {
        FormationMode::Full
    } else {
        FormationMode::CenterRowOnly
    };

    let start = std::time::Instant::now();
    let extent = scene.extent();
    let mut plans: Vec<Option<MotionSamplePlan>> = vec![None; set.frames.len()];
    let mut refs: Vec<Option<SsimReference>> = Vec::new();
    refs.resize_with(set.frames.len(), || None);

    let mut report = TrainReport {
        iterations: 0,
        evals: Vec::new(),
        loss_curve: Vec::with_capacity(config.iterations as usize),
        final_psnr_db: 0.0,
        final_ssim: 0.0,
        wall_seconds: 0.0,
        holdout_gradient_contributions: 0,
        diverged_at: None,
        train_frame_ids: train_idx.iter().map(|&i| set.frames[i].meta.frame_id).collect(),
        eval_frame_ids: eval_idx.iter().map(|&i| set.frames[i].meta.frame_id).collect(),
    };

    report.evals.push(evaluate_holdout(
        set, &scene, &eval_idx, &mut plans, &mut refs, eval_mode, config, 0,
    )?);
    let mut last_good = scene.clone();

    let mut adam = Adam::new(scene.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for iter in 0..config.iterations {
        let fi = train_idx[rng.random_range(0..train_idx.len())];
        let frame = &set.frames[fi];
        let train_mode = if config.use_motion_sampling && iter >= config.rs_enable_iter {
            FormationMode::Full
        } else {
            FormationMode::CenterRowOnly
        };
        let plan = if train_mode == FormationMode::CenterRowOnly {
            MotionSamplePlan::single(&frame.meta)
        } else {
            ensure_plan(&mut plans, fi, set, config)?;
            plans[fi].clone().expect("plan just ensured")
        };
        let ctx = form_image_with_context(
            &scene,
            &set.trajectory,
            &set.camera,
            &frame.meta,
            &set.maps,
            &plan,
            train_mode,
            &config.formation,
        )?;
        ensure_ssim_ref(&mut refs, fi, set)?;
        let loss = photometric_loss_prepared(
            &ctx.formed().pixels,
            &frame.image,
            refs[fi].as_ref().expect("ref just ensured"),
            config.lambda,
        )?;
        if !loss.total.is_finite() {
            report.diverged_at = Some(iter);
            break;
        }
        let upstream = ImageRgb {
            width: set.camera.width,
            height: set.camera.height,
            data: loss.grad,
        };
        let mut grads = GradientBuffer::zeros(scene.len());
        ctx.backward_into(&scene, &upstream, &mut grads)?;
        if is_eval[fi] {
            report.holdout_gradient_contributions += 1;
        }
        if !grads.check_finite() {
            report.diverged_at = Some(iter);
            break;
        }
        let rates = GroupRates::standard(position_lr(iter, config.iterations, extent))
            .scaled(config.lr_scale);
        adam.step(&mut scene, &grads, &rates)?;
        report.iterations = iter + 1;
        report.loss_curve.push(loss.total);

        if (iter + 1) % config.eval_every == 0 || iter + 1 == config.iterations {
            let point = evaluate_holdout(
                set, &scene, &eval_idx, &mut plans, &mut refs, eval_mode, config, iter + 1,
            )?;
            report.evals.push(point);
            last_good = scene.clone();
        }
    }

    if report.diverged_at.is_some() {
        scene = last_good;
    }
    let last = report.evals.last().expect("at least the initial eval exists");
    report.final_psnr_db = last.psnr_db;
    report.final_ssim = last.ssim;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((scene, report))
}
