use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use egosplat::geometry::{build_rectification, GeometryError, Pose};
use egosplat::image_buf::{ImageIoError, ImageMono, ImageRgb};
use egosplat::image_formation::{
    form_image, plan_motion_samples, FormationConfig, FormationError, FormationMode,
};
use egosplat::metrics::{
    reproj_percentiles, save_polyline_plot, AblationTable, MetricsError, PlotSeries, RunSummary,
};
use egosplat::optimizer::{
    score_frames, split_holdout, train, FrameScore, OptimizerError, TrainConfig, TrainingSet,
};
use egosplat::rasterizer::RasterizeError;
use egosplat::scene::{init_from_points, GaussianScene, InitConfig, SceneError};
use egosplat::simulator::{
    capture, generate_scene, write_anchor_file, CaptureDataset, ExposurePolicy, MotionKind,
    MotionProfile, PoseDegradation, SceneKind, SensorProfile, SimulatorError,
    DEFAULT_EXPOSURE_CAP_S, DEFAULT_FRAME_RATE_HZ, DEFAULT_READOUT_S,
};

/// Exit status 2: the inputs are wrong (bad flags, malformed or mismatched
/// dataset, missing files). Exit status 3: the inputs parsed but the
/// numbers went bad (non-finite checkpoint, diverged optimization).
#[derive(Debug)]
enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

fn formation_is_numerical(e: &FormationError) -> bool {
    matches!(e, FormationError::Raster(RasterizeError::NonFiniteGaussian { .. }))
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FormationError> for CliError {
    fn from(e: FormationError) -> Self {
        if formation_is_numerical(&e) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<SimulatorError> for CliError {
    fn from(e: SimulatorError) -> Self {
        match e {
            SimulatorError::Scene(inner) => inner.into(),
            SimulatorError::Formation(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Scene(inner) => inner.into(),
            OptimizerError::Formation(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ImageIoError> for CliError {
    fn from(e: ImageIoError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_fail(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Validation(format!("i/o error on {}: {e}", path.display()))
}

/// Plain-text fallback values for the active subcommand's flags: one
/// `name = value` (or `name value`) pair per line, `#` comments. Names match
/// the long flag names; explicit flags always win.
struct ConfigMap(HashMap<String, String>);

impl ConfigMap {
    fn empty() -> Self {
        Self(HashMap::new())
    }

    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_fail(path))?;
        let mut map = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = match line.split_once('=') {
                Some((k, v)) => (k, v),
                None => line.split_once(char::is_whitespace).ok_or_else(|| {
                    CliError::Validation(format!(
                        "config {} line {}: expected `name = value`, got `{line}`",
                        path.display(),
                        lineno + 1
                    ))
                })?,
            };
            map.insert(key.trim().replace('_', "-"), value.trim().to_string());
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::Validation(format!("config value `{key} = {raw}`: {e}"))
            }),
        }
    }
}

/// Flag if given, else the config-file value, else the default.
fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigMap, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

fn pick_opt<T: FromStr>(flag: Option<T>, cfg: &ConfigMap, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

/// Presence-only switch: the flag turns it on; otherwise the config file may.
fn pick_switch(flag: bool, cfg: &ConfigMap, key: &str) -> Result<bool, CliError> {
    if flag {
        return Ok(true);
    }
    Ok(cfg.get::<bool>(key)?.unwrap_or(false))
}

#[derive(Parser)]
#[command(
    name = "egosplat",
    version,
    about = "Rolling-shutter-aware gaussian-splatting reconstruction: simulate captures, train, render, evaluate"
)]
struct Cli {
    /// Directory all relative paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    /// Worker-thread cap for the parallel stages (0 = one per hardware thread).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Plain-text `name = value` defaults for the subcommand's flags; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture dataset with ground truth.
    Simulate(SimulateArgs),
    /// Rectify a raw-camera dataset into the pinhole frame training consumes.
    Preprocess(PreprocessArgs),
    /// Optimize a gaussian scene against a capture dataset.
    Train(TrainArgs),
    /// Render dataset frames from a trained checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint's renders against the recorded images.
    Eval(EvalArgs),
    /// Per-frame reprojection-displacement quartiles over the readout window.
    ReprojStats(ReprojStatsArgs),
    /// Run the four-configuration ablation sweep and emit the summary table.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SceneArg {
    Grid,
    BoxRoom,
    Clutter,
}

impl From<SceneArg> for SceneKind {
    fn from(s: SceneArg) -> Self {
        match s {
            SceneArg::Grid => SceneKind::ColorGrid,
            SceneArg::BoxRoom => SceneKind::BoxRoom,
            SceneArg::Clutter => SceneKind::Clutter,
        }
    }
}

impl FromStr for SceneArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Static,
    Orbit,
    HeadScan,
}

impl FromStr for ProfileArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FramesArg {
    /// Holdout frames (every `holdout-stride`-th).
    Eval,
    /// The complement of the holdout set.
    Train,
    All,
}

impl FromStr for FramesArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrajectoryArg {
    /// The ground-truth (bundle-adjusted quality) trajectory.
    Gt,
    /// The trajectory file as delivered with the dataset (possibly degraded).
    Recorded,
}

impl FromStr for TrajectoryArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth scene family.
    #[arg(long, value_enum)]
    scene: Option<SceneArg>,
    /// Number of gaussians in the ground-truth scene.
    #[arg(long)]
    gaussians: Option<usize>,
    /// Camera motion profile.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Orbit rate or head-scan peak rate, degrees/second.
    #[arg(long)]
    rate_deg_s: Option<f64>,
    /// Head-scan lateral translation sweep, meters.
    #[arg(long)]
    sweep_m: Option<f64>,
    /// Capture duration, seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Focal length in pixels.
    #[arg(long)]
    focal: Option<f64>,
    /// First-to-last-row readout time, milliseconds.
    #[arg(long)]
    readout_ms: Option<f64>,
    /// Auto-exposure cap, milliseconds (ignored when --fixed-exposure-ms is set).
    #[arg(long)]
    exposure_cap_ms: Option<f64>,
    /// Disable auto exposure and hold this exposure, milliseconds.
    #[arg(long)]
    fixed_exposure_ms: Option<f64>,
    /// Vignette attenuation at the image corner, in (0, 1].
    #[arg(long)]
    vignette_corner: Option<f64>,
    /// Photons per unit linear radiance (0 = no shot noise).
    #[arg(long)]
    photons: Option<f64>,
    #[arg(long)]
    frame_rate_hz: Option<f64>,
    /// Rotation random-walk step per trajectory knot, degrees.
    #[arg(long)]
    degrade_rot_deg: Option<f64>,
    /// Translation random-walk step per trajectory knot, millimeters.
    #[arg(long)]
    degrade_trans_mm: Option<f64>,
    /// Constant timestamp offset applied to the delivered trajectory, milliseconds.
    #[arg(long)]
    degrade_time_ms: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct PreprocessArgs {
    /// Raw-camera dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for the rectified dataset.
    #[arg(long)]
    out: PathBuf,
    /// Rectified focal length in pixels (default: source focal).
    #[arg(long)]
    focal: Option<f64>,
    /// Rectified width (default: source width).
    #[arg(long)]
    width: Option<usize>,
    /// Rectified height (default: source height).
    #[arg(long)]
    height: Option<usize>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<u64>,
    /// Iteration at which rolling-shutter (motion-sampled) formation replaces
    /// the single mid-frame pose (default: iters / 4).
    #[arg(long)]
    rs_enable_iter: Option<u64>,
    /// Train against the delivered (degraded) trajectory instead of ground truth.
    #[arg(long)]
    no_viba: bool,
    /// Keep single-pose formation for the whole run.
    #[arg(long)]
    no_motion_sampling: bool,
    /// Store colors in linear radiance (gamma = 1).
    #[arg(long)]
    no_scene_gamma: bool,
    /// Train on the noise-free image set.
    #[arg(long)]
    clean: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Structural-term weight in the loss.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    holdout_stride: Option<usize>,
    /// Multiplier on every group learning rate (0 freezes the scene).
    #[arg(long)]
    lr_scale: Option<f64>,
}

#[derive(clap::Args)]
struct RenderArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Scene checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which frames to render.
    #[arg(long, value_enum)]
    frames: Option<FramesArg>,
    /// Gain multiplier re-applied in the response model before clamping.
    #[arg(long)]
    gain_boost: Option<f64>,
    /// Trajectory the renders are posed with.
    #[arg(long, value_enum)]
    trajectory: Option<TrajectoryArg>,
    /// Render every frame from its single mid-frame pose.
    #[arg(long)]
    single_pose: bool,
    #[arg(long)]
    holdout_stride: Option<usize>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for metrics files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    frames: Option<FramesArg>,
    /// Score against the noise-free image set.
    #[arg(long)]
    clean: bool,
    #[arg(long, value_enum)]
    trajectory: Option<TrajectoryArg>,
    /// Render every frame from its single mid-frame pose.
    #[arg(long)]
    single_pose: bool,
    #[arg(long)]
    holdout_stride: Option<usize>,
}

#[derive(clap::Args)]
struct ReprojStatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    trajectory: Option<TrajectoryArg>,
}

#[derive(clap::Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    rs_enable_iter: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Train on the noise-free image set.
    #[arg(long)]
    clean: bool,
    /// Scene label in the emitted table (default: dataset directory name).
    #[arg(long)]
    scene_name: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let cfg = match &cli.config {
        Some(p) => ConfigMap::load(&cli.root.join(p))?,
        None => ConfigMap::empty(),
    };
    let root = cli.root;
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&root, &cfg, args),
        Command::Preprocess(args) => cmd_preprocess(&root, &cfg, args),
        Command::Train(args) => cmd_train(&root, &cfg, args),
        Command::Render(args) => cmd_render(&root, &cfg, args),
        Command::Eval(args) => cmd_eval(&root, &cfg, args),
        Command::ReprojStats(args) => cmd_reproj_stats(&root, &cfg, args),
        Command::Ablate(args) => cmd_ablate(&root, &cfg, args),
    }
}

fn cmd_simulate(root: &Path, cfg: &ConfigMap, args: SimulateArgs) -> Result<(), CliError> {
    let out = root.join(&args.out);
    let scene_kind: SceneKind = pick(args.scene, cfg, "scene", SceneArg::Grid)?.into();
    let gaussians = pick(args.gaussians, cfg, "gaussians", 400)?;
    let profile = pick(args.profile, cfg, "profile", ProfileArg::HeadScan)?;
    let rate = pick(args.rate_deg_s, cfg, "rate-deg-s", 200.0)?;
    let sweep = pick(args.sweep_m, cfg, "sweep-m", 0.05)?;
    let duration = pick(args.duration_s, cfg, "duration-s", 3.2)?;
    let width = pick(args.width, cfg, "width", 256)?;
    let height = pick(args.height, cfg, "height", 256)?;
    let focal = pick(args.focal, cfg, "focal", 240.0)?;
    let readout_ms = pick(args.readout_ms, cfg, "readout-ms", DEFAULT_READOUT_S * 1e3)?;
    let cap_ms = pick(args.exposure_cap_ms, cfg, "exposure-cap-ms", DEFAULT_EXPOSURE_CAP_S * 1e3)?;
    let fixed_ms = pick_opt(args.fixed_exposure_ms, cfg, "fixed-exposure-ms")?;
    let vignette = pick(args.vignette_corner, cfg, "vignette-corner", 0.8)?;
    let photons = pick(args.photons, cfg, "photons", 0.0)?;
    let frame_rate = pick(args.frame_rate_hz, cfg, "frame-rate-hz", DEFAULT_FRAME_RATE_HZ)?;
    let rot_deg = pick(args.degrade_rot_deg, cfg, "degrade-rot-deg", 0.0)?;
    let trans_mm = pick(args.degrade_trans_mm, cfg, "degrade-trans-mm", 0.0)?;
    let time_ms = pick(args.degrade_time_ms, cfg, "degrade-time-ms", 0.0)?;
    let seed = pick(args.seed, cfg, "seed", 0)?;

    let scene = generate_scene(scene_kind, gaussians, seed)?;
    let kind = match profile {
        ProfileArg::Static => MotionKind::Static,
        ProfileArg::Orbit => MotionKind::Orbit { deg_per_s: rate },
        ProfileArg::HeadScan => {
            MotionKind::HeadScan { peak_deg_per_s: rate, translation_sweep_m: sweep }
        }
    };
    let mut motion = MotionProfile::new(kind, duration);
    motion.seed = seed;
    let mut sensor = SensorProfile::new(width, height, focal);
    sensor.readout = readout_ms * 1e-3;
    sensor.exposure = match fixed_ms {
        Some(ms) => ExposurePolicy::Fixed { t_e: ms * 1e-3 },
        None => ExposurePolicy::Auto { cap: cap_ms * 1e-3 },
    };
    sensor.vignette_corner = vignette;
    sensor.photons_per_unit = photons;
    sensor.frame_rate = frame_rate;
    let degradation = PoseDegradation {
        rotation_walk_deg: rot_deg,
        translation_walk_mm: trans_mm,
        time_offset_ms: time_ms,
    };

    let ds = capture(&scene, &motion, &sensor, &degradation, seed, &out)?;
    println!(
        "simulated {} frames ({} empty) of {} gaussians at {}x{} into {}",
        ds.num_frames(),
        ds.manifest.empty_frames,
        ds.manifest.gaussians,
        width,
        height,
        out.display()
    );
    Ok(())
}

fn cmd_preprocess(root: &Path, cfg: &ConfigMap, args: PreprocessArgs) -> Result<(), CliError> {
    let src_dir = root.join(&args.dataset);
    let out = root.join(&args.out);
    let ds = CaptureDataset::load(&src_dir)?;
    let focal = pick(args.focal, cfg, "focal", ds.camera.focal)?;
    let width = pick(args.width, cfg, "width", ds.camera.width)?;
    let height = pick(args.height, cfg, "height", ds.camera.height)?;

    let dst_cam = egosplat::geometry::CameraModel::pinhole(focal, width, height);
    let rect = build_rectification(&ds.camera, &dst_cam, &Pose::identity(), false)?;

    for sub in ["images", "images_clean", "sparse_depth"] {
        let p = out.join(sub);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(io_fail(&p))?;
        }
        std::fs::create_dir_all(&p).map_err(io_fail(&p))?;
    }

    rect.ratio
        .encode8()
        .save(out.join("index_ratio.png"))
        .map_err(|e| CliError::Validation(format!("writing index_ratio.png: {e}")))?;
    let src_vignette = ImageMono::load_png16(&src_dir.join("vignette.png"))?;
    rect.remap_mono(&src_vignette)?.save_png16(&out.join("vignette.png"))?;

    for k in 0..ds.num_frames() {
        let name = format!("{:06}.png", k);
        for (sub, clean) in [("images", false), ("images_clean", true)] {
            let img = ds.load_image(k, clean)?;
            rect.remap_rgb(&img)?.save_png8(&out.join(sub).join(&name))?;
        }
        let anchors: Vec<_> = ds
            .load_anchors(k)?
            .iter()
            .filter_map(|a| {
                let ray = ds.camera.unproject(a.u, a.v);
                if ray.z <= 0.0 {
                    return None;
                }
                let p = ray * (a.depth / ray.z);
                let (u, v) = dst_cam.project(&p)?;
                let in_bounds = u >= 0.0
                    && u <= (width - 1) as f64
                    && v >= 0.0
                    && v <= (height - 1) as f64;
                in_bounds.then_some(egosplat::geometry::DepthAnchor { u, v, depth: p.z })
            })
            .collect();
        write_anchor_file(&out.join("sparse_depth").join(format!("{:06}.txt", k)), &anchors)?;
    }

    for file in ["meta.txt", "trajectory.txt", "trajectory_gt.txt", "points.txt"] {
        std::fs::copy(src_dir.join(file), out.join(file)).map_err(io_fail(&out.join(file)))?;
    }
    let description = egosplat::simulator::CameraDescription {
        camera: dst_cam,
        gamma: ds.gamma,
        radiance_scale: ds.radiance_scale,
        t_e_ref: ds.t_e_ref,
    };
    let cam_path = out.join("camera.json");
    let cam_file = std::fs::File::create(&cam_path).map_err(io_fail(&cam_path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(cam_file), &description)
        .map_err(|e| CliError::Validation(format!("writing camera.json: {e}")))?;
    let mut manifest = ds.manifest.clone();
    manifest.width = width;
    manifest.height = height;
    manifest.write(&out.join("manifest"))?;

    let reloaded = CaptureDataset::load(&out)?;
    let valid = reloaded.maps.valid().iter().filter(|&&v| v).count();
    println!(
        "rectified {} frames to {}x{} (focal {focal} px, {valid}/{} valid pixels) into {}",
        reloaded.num_frames(),
        width,
        height,
        width * height,
        out.display()
    );
    Ok(())
}

/// Resolved training settings, echoed next to every run's artifacts so the
/// run is reproducible from its output directory alone.
#[derive(Serialize)]
struct RunManifest {
    dataset: String,
    seed: u64,
    iterations: u64,
    rs_enable_iter: u64,
    lambda: f64,
    holdout_stride: usize,
    eval_every: u64,
    lr_scale: f64,
    use_viba_trajectory: bool,
    use_motion_sampling: bool,
    use_scene_gamma: bool,
    train_on_clean_images: bool,
    t_e_ref: f64,
}

struct TrainSettings {
    config: TrainConfig,
    clean: bool,
}

fn resolve_train_settings(
    cfg: &ConfigMap,
    t_e_ref: f64,
    iters: Option<u64>,
    rs_enable_iter: Option<u64>,
    no_viba: bool,
    no_motion_sampling: bool,
    no_scene_gamma: bool,
    clean: bool,
    seed: Option<u64>,
    eval_every: Option<u64>,
    lambda: Option<f64>,
    holdout_stride: Option<usize>,
    lr_scale: Option<f64>,
) -> Result<TrainSettings, CliError> {
    let iterations = pick(iters, cfg, "iters", 5_000)?;
    let rs_enable = pick(rs_enable_iter, cfg, "rs-enable-iter", iterations / 4)?;
    let config = TrainConfig {
        iterations,
        rs_enable_iter: rs_enable,
        lambda: pick(lambda, cfg, "lambda", 0.2)?,
        holdout_stride: pick(holdout_stride, cfg, "holdout-stride", 8)?,
        eval_every: pick(eval_every, cfg, "eval-every", 1_000)?,
        lr_scale: pick(lr_scale, cfg, "lr-scale", 1.0)?,
        use_viba_trajectory: !pick_switch(no_viba, cfg, "no-viba")?,
        use_motion_sampling: !pick_switch(no_motion_sampling, cfg, "no-motion-sampling")?,
        use_scene_gamma: !pick_switch(no_scene_gamma, cfg, "no-scene-gamma")?,
        formation: FormationConfig { t_e_ref, ..FormationConfig::default() },
        seed: pick(seed, cfg, "seed", 0)?,
    };
    Ok(TrainSettings { config, clean: pick_switch(clean, cfg, "clean")? })
}

fn init_scene(ds: &CaptureDataset) -> Result<GaussianScene, CliError> {
    let points = ds.load_points()?;
    let init = InitConfig {
        gamma: ds.gamma,
        radiance_scale: ds.radiance_scale,
        ..InitConfig::default()
    };
    Ok(init_from_points(&points, &init)?)
}

/// Train one configuration and write its artifacts (checkpoint, report,
/// run manifest, per-holdout-frame renders of the final scene).
fn run_training(
    dataset_label: &str,
    ds: &CaptureDataset,
    settings: &TrainSettings,
    out: &Path,
) -> Result<egosplat::optimizer::TrainReport, CliError> {
    let set = ds.to_training_set(settings.config.use_viba_trajectory, settings.clean)?;
    let init = init_scene(ds)?;
    let (scene, report) = train(&set, init, &settings.config)?;

    std::fs::create_dir_all(out).map_err(io_fail(out))?;
    scene.save_checkpoint(&out.join("scene.txt"))?;
    report.save_json(&out.join("report.json"))?;
    let manifest = RunManifest {
        dataset: dataset_label.to_string(),
        seed: settings.config.seed,
        iterations: settings.config.iterations,
        rs_enable_iter: settings.config.rs_enable_iter,
        lambda: settings.config.lambda,
        holdout_stride: settings.config.holdout_stride,
        eval_every: settings.config.eval_every,
        lr_scale: settings.config.lr_scale,
        use_viba_trajectory: settings.config.use_viba_trajectory,
        use_motion_sampling: settings.config.use_motion_sampling,
        use_scene_gamma: settings.config.use_scene_gamma,
        train_on_clean_images: settings.clean,
        t_e_ref: settings.config.formation.t_e_ref,
    };
    let run_path = out.join("run.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Validation(format!("serializing run manifest: {e}")))?;
    std::fs::write(&run_path, text).map_err(io_fail(&run_path))?;

    let renders = out.join("renders");
    std::fs::create_dir_all(&renders).map_err(io_fail(&renders))?;
    let mode = if settings.config.use_motion_sampling {
        FormationMode::Full
    } else {
        FormationMode::CenterRowOnly
    };
    let (_, eval_idx) = split_holdout(set.frames.len(), settings.config.holdout_stride)?;
    render_frames(&set, &scene, &eval_idx, mode, &settings.config.formation, 1.0, &renders)?;

    if let Some(iter) = report.diverged_at {
        return Err(CliError::Numerical(format!(
            "training diverged at iteration {iter}; the last evaluated checkpoint was written to {}",
            out.join("scene.txt").display()
        )));
    }
    Ok(report)
}

fn cmd_train(root: &Path, cfg: &ConfigMap, args: TrainArgs) -> Result<(), CliError> {
    let dataset_dir = root.join(&args.dataset);
    let out = root.join(&args.out);
    let ds = CaptureDataset::load(&dataset_dir)?;
    let settings = resolve_train_settings(
        cfg,
        ds.t_e_ref,
        args.iters,
        args.rs_enable_iter,
        args.no_viba,
        args.no_motion_sampling,
        args.no_scene_gamma,
        args.clean,
        args.seed,
        args.eval_every,
        args.lambda,
        args.holdout_stride,
        args.lr_scale,
    )?;
    let report = run_training(&args.dataset.display().to_string(), &ds, &settings, &out)?;
    println!(
        "trained {} iterations: holdout PSNR {:.3} dB, SSIM {:.4} ({} train / {} eval frames)",
        report.iterations,
        report.final_psnr_db,
        report.final_ssim,
        report.train_frame_ids.len(),
        report.eval_frame_ids.len()
    );
    Ok(())
}

fn selected_indices(
    n_frames: usize,
    which: FramesArg,
    stride: usize,
) -> Result<Vec<usize>, CliError> {
    Ok(match which {
        FramesArg::All => (0..n_frames).collect(),
        FramesArg::Eval => split_holdout(n_frames, stride)?.1,
        FramesArg::Train => split_holdout(n_frames, stride)?.0,
    })
}

/// Form the selected frames from `scene` (gain multiplied by `boost`) and
/// save one PNG per frame, named by frame id. Returns the mean response
/// over all rendered pixels.
fn render_frames(
    set: &TrainingSet,
    scene: &GaussianScene,
    indices: &[usize],
    mode: FormationMode,
    formation: &FormationConfig,
    boost: f64,
    out: &Path,
) -> Result<f64, CliError> {
    let rendered: Vec<(u64, ImageRgb)> = indices
        .par_iter()
        .map(|&i| -> Result<(u64, ImageRgb), CliError> {
            let frame = &set.frames[i];
            let mut meta = frame.meta;
            meta.gain *= boost;
            let plan = if mode == FormationMode::CenterRowOnly {
                egosplat::image_formation::MotionSamplePlan::single(&meta)
            } else {
                plan_motion_samples(&set.trajectory, &set.camera, &meta, &frame.anchors, formation)?
            };
            let formed =
                form_image(scene, &set.trajectory, &set.camera, &meta, &set.maps, &plan, mode, formation)?;
            Ok((meta.frame_id, formed.pixels))
        })
        .collect::<Result<_, _>>()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (frame_id, pixels) in &rendered {
        sum += pixels.data.iter().sum::<f64>();
        count += pixels.data.len();
        pixels.save_png8(&out.join(format!("{:06}.png", frame_id)))?;
    }
    Ok(sum / count.max(1) as f64)
}

fn cmd_render(root: &Path, cfg: &ConfigMap, args: RenderArgs) -> Result<(), CliError> {
    let ds = CaptureDataset::load(&root.join(&args.dataset))?;
    let out = root.join(&args.out);
    let which = pick(args.frames, cfg, "frames", FramesArg::Eval)?;
    let boost = pick(args.gain_boost, cfg, "gain-boost", 1.0)?;
    let trajectory = pick(args.trajectory, cfg, "trajectory", TrajectoryArg::Gt)?;
    let single_pose = pick_switch(args.single_pose, cfg, "single-pose")?;
    let stride = pick(args.holdout_stride, cfg, "holdout-stride", 8)?;
    if !(boost > 0.0) {
        return Err(CliError::Validation(format!("gain boost {boost} must be positive")));
    }

    let scene = GaussianScene::load_checkpoint(&root.join(&args.checkpoint))?;
    scene.check_finite()?;
    let set = ds.to_training_set(trajectory == TrajectoryArg::Gt, false)?;
    let indices = selected_indices(set.frames.len(), which, stride)?;
    let mode = if single_pose { FormationMode::CenterRowOnly } else { FormationMode::Full };
    let formation = FormationConfig { t_e_ref: ds.t_e_ref, ..FormationConfig::default() };
    std::fs::create_dir_all(&out).map_err(io_fail(&out))?;
    let mean = render_frames(&set, &scene, &indices, mode, &formation, boost, &out)?;
    println!(
        "rendered {} frames (gain boost x{boost}) into {}: mean response {mean:.6}",
        indices.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    dataset: String,
    checkpoint: String,
    frames: Vec<FrameScore>,
    mean_psnr_db: f64,
    mean_ssim: f64,
}

fn cmd_eval(root: &Path, cfg: &ConfigMap, args: EvalArgs) -> Result<(), CliError> {
    let ds = CaptureDataset::load(&root.join(&args.dataset))?;
    let out = root.join(&args.out);
    let which = pick(args.frames, cfg, "frames", FramesArg::Eval)?;
    let clean = pick_switch(args.clean, cfg, "clean")?;
    let trajectory = pick(args.trajectory, cfg, "trajectory", TrajectoryArg::Gt)?;
    let single_pose = pick_switch(args.single_pose, cfg, "single-pose")?;
    let stride = pick(args.holdout_stride, cfg, "holdout-stride", 8)?;

    let scene = GaussianScene::load_checkpoint(&root.join(&args.checkpoint))?;
    scene.check_finite()?;
    let set = ds.to_training_set(trajectory == TrajectoryArg::Gt, clean)?;
    let indices = selected_indices(set.frames.len(), which, stride)?;
    if indices.is_empty() {
        return Err(CliError::Validation("no frames selected for evaluation".to_string()));
    }
    let mode = if single_pose { FormationMode::CenterRowOnly } else { FormationMode::Full };
    let formation = FormationConfig { t_e_ref: ds.t_e_ref, ..FormationConfig::default() };
    let scores = score_frames(&set, &scene, &indices, mode, &formation)?;

    let k = scores.len() as f64;
    let mean_psnr_db = scores.iter().map(|s| s.psnr_db).sum::<f64>() / k;
    let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / k;
    std::fs::create_dir_all(&out).map_err(io_fail(&out))?;
    let output = EvalOutput {
        dataset: args.dataset.display().to_string(),
        checkpoint: args.checkpoint.display().to_string(),
        frames: scores,
        mean_psnr_db,
        mean_ssim,
    };
    let json_path = out.join("metrics.json");
    let text = serde_json::to_string_pretty(&output)
        .map_err(|e| CliError::Validation(format!("serializing metrics: {e}")))?;
    std::fs::write(&json_path, text).map_err(io_fail(&json_path))?;

    let mut table = String::from("# frame_id psnr_db ssim\n");
    for s in &output.frames {
        table.push_str(&format!("{} {:.9} {:.9}\n", s.frame_id, s.psnr_db, s.ssim));
    }
    table.push_str(&format!("# mean {mean_psnr_db:.9} {mean_ssim:.9}\n"));
    let table_path = out.join("metrics.txt");
    std::fs::write(&table_path, table).map_err(io_fail(&table_path))?;

    println!(
        "evaluated {} frames: mean PSNR {mean_psnr_db:.3} dB, mean SSIM {mean_ssim:.4}",
        output.frames.len()
    );
    Ok(())
}

fn cmd_reproj_stats(root: &Path, cfg: &ConfigMap, args: ReprojStatsArgs) -> Result<(), CliError> {
    let ds = CaptureDataset::load(&root.join(&args.dataset))?;
    let out = root.join(&args.out);
    let trajectory = pick(args.trajectory, cfg, "trajectory", TrajectoryArg::Gt)?;
    let traj = if trajectory == TrajectoryArg::Gt { &ds.trajectory_gt } else { &ds.trajectory };

    let mut frames = Vec::with_capacity(ds.num_frames());
    for k in 0..ds.num_frames() {
        frames.push((ds.metas[k], ds.load_anchors(k)?));
    }
    let series = reproj_percentiles(traj, &ds.camera, &frames)?;
    std::fs::create_dir_all(&out).map_err(io_fail(&out))?;
    series.write_table(&out.join("reproj.txt"))?;
    if !series.frames.is_empty() {
        let quartiles: Vec<Vec<(f64, f64)>> =
            (0..3).map(|q| series.quartile_points(q)).collect();
        let plot = [
            PlotSeries { label: "p25", points: &quartiles[0] },
            PlotSeries { label: "p50", points: &quartiles[1] },
            PlotSeries { label: "p75", points: &quartiles[2] },
        ];
        save_polyline_plot(&out.join("reproj.png"), 480, 300, &plot)?;
    }
    let peak = series.frames.iter().map(|f| f.p50).fold(0.0, f64::max);
    println!(
        "reprojection stats over {} frames ({} skipped without depth): peak median {peak:.3} px",
        series.frames.len(),
        series.skipped_no_depth
    );
    Ok(())
}

fn cmd_ablate(root: &Path, cfg: &ConfigMap, args: AblateArgs) -> Result<(), CliError> {
    let dataset_dir = root.join(&args.dataset);
    let out = root.join(&args.out);
    let ds = CaptureDataset::load(&dataset_dir)?;
    let scene_label = match pick_opt(args.scene_name, cfg, "scene-name")? {
        Some(name) => name,
        None => dataset_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".to_string()),
    };
    let base = resolve_train_settings(
        cfg,
        ds.t_e_ref,
        args.iters,
        args.rs_enable_iter,
        false,
        false,
        false,
        args.clean,
        args.seed,
        args.eval_every,
        None,
        None,
        None,
    )?;

    // (label, viba trajectory, motion sampling, scene gamma)
    let variants = [
        ("full", true, true, true),
        ("no_viba", false, true, true),
        ("no_motion_sampling", true, false, true),
        ("no_scene_gamma", true, true, false),
    ];
    let mut runs = Vec::with_capacity(variants.len());
    for (label, viba, motion_sampling, gamma) in variants {
        let mut settings = TrainSettings {
            config: base.config.clone(),
            clean: base.clean,
        };
        settings.config.use_viba_trajectory = viba;
        settings.config.use_motion_sampling = motion_sampling;
        settings.config.use_scene_gamma = gamma;
        let run_out = out.join(label);
        let report =
            run_training(&args.dataset.display().to_string(), &ds, &settings, &run_out)?;
        println!(
            "{label}: holdout PSNR {:.3} dB, SSIM {:.4}",
            report.final_psnr_db, report.final_ssim
        );
        runs.push(RunSummary {
            config: label.to_string(),
            scene: scene_label.clone(),
            psnr_db: report.final_psnr_db,
            ssim: report.final_ssim,
        });
    }

    let table = AblationTable::from_runs(&runs);
    let text = table.render_text();
    std::fs::create_dir_all(&out).map_err(io_fail(&out))?;
    std::fs::write(out.join("table.txt"), &text).map_err(io_fail(&out.join("table.txt")))?;
    std::fs::write(out.join("table.csv"), table.render_csv())
        .map_err(io_fail(&out.join("table.csv")))?;
    print!("{text}");
    Ok(())
}
