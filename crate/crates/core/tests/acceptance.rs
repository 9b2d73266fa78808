//! Acceptance suite: ten numbered end-to-end properties of the
//! reconstruction stack, one test and one printed verdict line each.
//! Criteria 5, 6, and 10 share a single memoized four-configuration
//! ablation run on a synthetic head-scan capture.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egosplat::geometry::{
    reprojection_displacements, CameraModel, DepthAnchor, IndexRatioImage, Pose, Trajectory,
};
use egosplat::image_buf::{ImageMono, ImageRgb};
use egosplat::image_formation::{
    form_image, form_image_with_context, plan_motion_samples, FormationConfig, FormationMode,
    MotionSamplePlan, PixelMaps,
};
use egosplat::metrics::psnr;
use egosplat::optimizer::{
    photometric_loss, score_frames, split_holdout, train, TrainConfig, TrainReport,
};
use egosplat::rasterizer::GradientBuffer;
use egosplat::scene::{init_from_points, GaussianScene, InitConfig};
use egosplat::simulator::{
    capture, generate_scene, ExposurePolicy, MotionKind, MotionProfile, PoseDegradation,
    SceneKind, SensorProfile,
};

// ---------------------------------------------------------------------------
// Pinned tolerances and margins. Every numeric bound the suite enforces
// lives here.
// ---------------------------------------------------------------------------

/// Criterion 1: relative error bound for analytic vs central-difference
/// gradients, applied to every parameter whose gradient magnitude exceeds
/// `GRAD_MIN_MAG`.
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_MIN_MAG: f64 = 1e-6;
/// Criterion 1 runtime bound, seconds.
const GRAD_RUNTIME_S: f64 = 120.0;

/// Criterion 2: per-channel bound between one-sample-per-row formation and
/// the brute-force full-render-per-row oracle.
const ORACLE_TOL: f64 = 1e-6;
/// Criterion 2 runtime bound, seconds.
const ORACLE_RUNTIME_S: f64 = 60.0;

/// Criterion 3: per-channel bound between full and single-pose formation on
/// a static trajectory.
const STATIC_EQUIV_TOL: f64 = 1e-9;

/// Criterion 4: window the brute-force full-bracket median displacement must
/// land in so that the smallest per-sub-bracket-feasible count is exactly 8.
const EIGHT_SAMPLE_DISPLACEMENT_PX: (f64, f64) = (7.0, 8.0);

/// Criterion 5: required holdout-PSNR margins of the full configuration over
/// the ablated ones, and the wall-clock bound for the whole ablation.
const VIBA_MARGIN_DB: f64 = 1.0;
const MOTION_SAMPLING_MARGIN_DB: f64 = 0.5;
const ABLATION_RUNTIME_S: f64 = 1800.0;

/// Criterion 6: the fixture scene must span at least this factor between its
/// brightest and dimmest emitted radiance (two decades).
const RADIANCE_SPAN_MIN: f64 = 100.0;

/// Criterion 7: required gain of reconstruction-vs-clean PSNR over the
/// noisy-input-vs-clean PSNR on the holdout frames.
const NOISE2NOISE_MARGIN_DB: f64 = 3.0;

/// Criterion 8: bound for the formation-model algebra identities.
const ALGEBRA_TOL: f64 = 1e-12;
/// Criterion 8: a uniform difference of 0.1 must score this PSNR.
const PSNR_CLOSED_FORM_DB: f64 = 20.0;

/// Criterion 10: all reductions in the stack are serial and ordered, so two
/// same-seed runs must agree exactly; the reproducibility tolerance is zero.
const REPRO_TOL_DB: f64 = 0.0;

/// Print the per-criterion verdict line, then enforce it.
fn conclude(criterion: u32, name: &str, ok: bool, detail: String) {
    let verdict = if ok { "pass" } else { "FAIL" };
    println!("criterion {criterion} ({name}): {verdict} — {detail}");
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Small builders shared by the cheap criteria.
// ---------------------------------------------------------------------------

fn stand_off_pose(yaw: f64) -> Pose {
    Pose::new(
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw),
        Vector3::new(0.0, 0.0, -2.5),
    )
}

/// Constant-yaw-rate trajectory about the stand-off viewpoint.
fn yaw_trajectory(rate_rad_s: f64, t_end: f64) -> Trajectory {
    let dt = 1e-3;
    let n = (t_end / dt).ceil() as usize;
    let knots = (0..=n).map(|i| {
        let t = i as f64 * dt;
        (t, stand_off_pose(rate_rad_s * t))
    });
    Trajectory::new(knots.collect()).unwrap()
}

fn static_trajectory(t_end: f64) -> Trajectory {
    let knots = vec![(0.0, stand_off_pose(0.0)), (t_end, stand_off_pose(0.0))];
    Trajectory::new(knots).unwrap()
}

fn meta(t0: f64, readout: f64, exposure: f64, gain: f64) -> egosplat::geometry::FrameMeta {
    egosplat::geometry::FrameMeta { frame_id: 0, t0, readout, exposure, gain }
}

/// Regular grid of depth anchors across the image at a constant z-depth.
fn anchor_grid(cam: &CameraModel, depth: f64, step: usize) -> Vec<DepthAnchor> {
    let mut anchors = Vec::new();
    let mut v = step / 2;
    while v < cam.height {
        let mut u = step / 2;
        while u < cam.width {
            anchors.push(DepthAnchor { u: u as f64, v: v as f64, depth });
            u += step;
        }
        v += step;
    }
    anchors
}

/// Small random scene of visible mid-opacity blobs in front of the
/// stand-off viewpoint.
fn random_scene(count: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::empty(2.2, 1.1);
    for _ in 0..count {
        let mean = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.2..0.2),
        );
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let log_scale = Vector3::new(
            rng.random_range(0.05f64..0.15).ln(),
            rng.random_range(0.05f64..0.15).ln(),
            rng.random_range(0.05f64..0.15).ln(),
        );
        let color = Vector3::new(
            rng.random_range(0.2..0.9),
            rng.random_range(0.2..0.9),
            rng.random_range(0.2..0.9),
        );
        scene.push(
            mean,
            UnitQuaternion::from_scaled_axis(axis),
            log_scale,
            rng.random_range(0.8..2.5),
            color,
        );
    }
    scene
}

/// Non-uniform vignette plus identity readout-ratio maps.
fn patterned_maps(cam: &CameraModel) -> PixelMaps {
    let mut vignette = ImageMono::filled(cam.width, cam.height, 1.0);
    for (i, v) in vignette.data.iter_mut().enumerate() {
        *v = 0.7 + 0.3 * ((i % 13) as f64 / 12.0);
    }
    PixelMaps::new(IndexRatioImage::identity(cam.width, cam.height, false), vignette).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1 — analytic gradients of render → form → loss match central
// finite differences.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_full_pipeline_gradients_match_finite_differences() {
    let started = Instant::now();
    let scene = random_scene(6, 41);
    let cam = CameraModel::pinhole(60.0, 48, 48);
    let traj = yaw_trajectory(4.0, 0.1);
    let maps = patterned_maps(&cam);
    let cfg = FormationConfig::default();
    let m = meta(0.04, 0.016, 0.001, 1.2);
    let lambda = 0.2;

    let anchors = anchor_grid(&cam, 2.5, 12);
    let plan = plan_motion_samples(&traj, &cam, &m, &anchors, &cfg).unwrap();
    assert!(plan.len() >= 2, "fixture should exercise the multi-sample path");

    // The reference frame is a render of a deterministically perturbed copy
    // of the scene, so the loss sits at a generic point of its landscape.
    let captured = {
        let mut other = random_scene(6, 41);
        for i in 0..other.len() {
            other.means[i] += Vector3::new(0.02, -0.015, 0.01);
            other.colors[i] *= 0.9;
            other.opacities_raw[i] += 0.3;
        }
        form_image(&other, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg)
            .unwrap()
            .pixels
    };

    let loss = |s: &GaussianScene| -> f64 {
        let formed =
            form_image(s, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg).unwrap();
        photometric_loss(&formed.pixels, &captured, &formed.valid, lambda).unwrap().total
    };

    let ctx =
        form_image_with_context(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg)
            .unwrap();
    let loss_value =
        photometric_loss(&ctx.formed().pixels, &captured, &ctx.formed().valid, lambda).unwrap();
    let upstream =
        ImageRgb { width: cam.width, height: cam.height, data: loss_value.grad.clone() };
    let mut grads = GradientBuffer::zeros(scene.len());
    ctx.backward_into(&scene, &upstream, &mut grads).unwrap();

    let h = 1e-6;
    let mut checked = 0usize;
    let mut worst_rel = 0.0f64;
    let mut worst_label = String::from("none");
    let mut check = |analytic: f64, perturb: &dyn Fn(&mut GaussianScene, f64), label: String| {
        if analytic.abs() <= GRAD_MIN_MAG {
            return;
        }
        let mut plus = scene.clone();
        perturb(&mut plus, h);
        let mut minus = scene.clone();
        perturb(&mut minus, -h);
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        checked += 1;
        if rel > worst_rel {
            worst_rel = rel;
            worst_label = format!("{label}: analytic {analytic:.6e} vs fd {numeric:.6e}");
        }
    };
    for i in 0..scene.len() {
        for ax in 0..3 {
            check(grads.means[i][ax], &|s, d| s.means[i][ax] += d, format!("mean[{i}][{ax}]"));
            check(
                grads.log_scales[i][ax],
                &|s, d| s.log_scales[i][ax] += d,
                format!("log_scale[{i}][{ax}]"),
            );
            check(grads.colors[i][ax], &|s, d| s.colors[i][ax] += d, format!("color[{i}][{ax}]"));
        }
        for k in 0..4 {
            check(
                grads.rotations[i][k],
                &|s, d| {
                    let mut coords = s.rotations[i].coords;
                    coords[k] += d;
                    s.rotations[i] = UnitQuaternion::new_normalize(Quaternion::new(
                        coords.w, coords.x, coords.y, coords.z,
                    ));
                },
                format!("rotation[{i}][{k}]"),
            );
        }
        check(grads.opacities_raw[i], &|s, d| s.opacities_raw[i] += d, format!("opacity[{i}]"));
    }
    check(grads.radiance_scale, &|s, d| s.radiance_scale += d, "radiance_scale".to_string());

    let elapsed = started.elapsed().as_secs_f64();
    let ok = checked > 50 && worst_rel < GRAD_REL_TOL && elapsed < GRAD_RUNTIME_S;
    conclude(
        1,
        "pipeline gradients vs finite differences",
        ok,
        format!(
            "{checked} parameters checked, worst relative error {worst_rel:.2e} ({worst_label}) \
             in {elapsed:.1} s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2 — one-sample-per-row formation equals the brute-force
// full-render-per-row oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_row_dense_formation_matches_per_row_oracle() {
    let started = Instant::now();
    let scene = generate_scene(SceneKind::Clutter, 20, 9).unwrap();
    let cam = CameraModel::pinhole(70.0, 64, 64);
    let traj = yaw_trajectory(5.0, 0.1);
    let maps = PixelMaps::uniform(cam.width, cam.height, false);
    let cfg = FormationConfig { max_samples: 64, ..FormationConfig::default() };
    let m = meta(0.02, 0.016, 1e-4, 1.0);

    let plan = MotionSamplePlan::uniform(&m, cam.height);
    let formed =
        form_image(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg).unwrap();

    // Oracle: for every row, rasterize the whole frame at that row's
    // assigned sample time through a one-sample plan (no per-sample pixel
    // masking anywhere) and keep just that row.
    let mut worst = 0.0f64;
    for v in 0..cam.height {
        let ratio = maps.ratio.get(0, v).unwrap();
        let (lo, hi) = plan.assigned_range(ratio);
        assert_eq!(lo, hi, "short-exposure fixture should assign one sample per row");
        let single = MotionSamplePlan {
            times: vec![plan.times[lo]],
            t0: m.t0,
            readout: m.readout,
            exposure: m.exposure,
        };
        let full =
            form_image(&scene, &traj, &cam, &m, &maps, &single, FormationMode::Full, &cfg)
                .unwrap();
        for x in 0..cam.width {
            for ch in 0..3 {
                let i = 3 * (v * cam.width + x) + ch;
                worst = worst.max((formed.pixels.data[i] - full.pixels.data[i]).abs());
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let ok = worst < ORACLE_TOL && elapsed < ORACLE_RUNTIME_S;
    conclude(
        2,
        "per-row oracle equivalence",
        ok,
        format!(
            "worst per-channel difference {worst:.2e} over {} rows in {elapsed:.1} s",
            cam.height
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3 — a static trajectory collapses to one motion sample, and the
// full model equals the single-pose model.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_static_trajectory_collapses_to_a_single_sample() {
    let scene = generate_scene(SceneKind::ColorGrid, 64, 3).unwrap();
    let cam = CameraModel::pinhole(60.0, 48, 48);
    let traj = static_trajectory(0.2);
    let maps = PixelMaps::uniform(cam.width, cam.height, false);
    let cfg = FormationConfig::default();
    let m = meta(0.05, 0.016, 0.001, 1.0);

    let plan = plan_motion_samples(&traj, &cam, &m, &anchor_grid(&cam, 2.5, 8), &cfg).unwrap();
    let full =
        form_image(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg).unwrap();
    let single_plan = MotionSamplePlan::single(&m);
    let single = form_image(
        &scene,
        &traj,
        &cam,
        &m,
        &maps,
        &single_plan,
        FormationMode::CenterRowOnly,
        &cfg,
    )
    .unwrap();

    let mut worst = 0.0f64;
    for (a, b) in full.pixels.data.iter().zip(&single.pixels.data) {
        worst = worst.max((a - b).abs());
    }
    let ok = plan.len() == 1 && worst < STATIC_EQUIV_TOL;
    conclude(
        3,
        "static collapse",
        ok,
        format!("plan has {} sample(s), worst mode difference {worst:.2e}", plan.len()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4 — a readout window with just under eight pixels of median
// displacement plans exactly eight samples.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_eight_pixel_readout_displacement_plans_eight_samples() {
    let cam = CameraModel::pinhole(240.0, 64, 64);
    let cfg = FormationConfig::default();
    let m = meta(0.02, 0.016, 1e-4, 1.0);
    let bracket = m.readout + m.exposure;
    // Constant yaw rate set for ~7.5 px of full-bracket median displacement:
    // rate = target_px / (focal · bracket).
    let rate = 7.5 / (cam.focal * bracket);
    let traj = yaw_trajectory(rate, 0.1);
    let anchors = anchor_grid(&cam, 2.5, 8);

    // Brute-force check of the construction before trusting the planner.
    let disp =
        reprojection_displacements(&traj, &cam, &anchors, (m.t0, m.t0 + bracket)).unwrap();
    let mut mags = disp.magnitudes.clone();
    mags.sort_by(|a, b| a.total_cmp(b));
    let median = mags[mags.len() / 2];

    let plan = plan_motion_samples(&traj, &cam, &m, &anchors, &cfg).unwrap();
    let ok = median > EIGHT_SAMPLE_DISPLACEMENT_PX.0
        && median < EIGHT_SAMPLE_DISPLACEMENT_PX.1
        && plan.len() == 8;
    conclude(
        4,
        "eight-sample planning",
        ok,
        format!("median bracket displacement {median:.3} px planned {} samples", plan.len()),
    );
}

// ---------------------------------------------------------------------------
// Shared fixture for criteria 5, 6, and 10: a head-scan capture with a
// degraded delivered trajectory, trained under four configurations, plus a
// same-seed rerun of the capture and of the full configuration.
// ---------------------------------------------------------------------------

const ABLATION_ITERATIONS: u64 = 5_000;
const ABLATION_RS_ENABLE_ITER: u64 = 1_250;
const ABLATION_SEED: u64 = 7;
/// Attitude random-walk step per 1 kHz trajectory knot, sized so the
/// accumulated drift over the 3.4 s knot span is about 0.3 degrees
/// (0.3 / sqrt(3400)).
const DEGRADED_WALK_STEP_DEG: f64 = 0.005;
const DEGRADED_TIME_OFFSET_MS: f64 = 1.0;

struct RunArtifacts {
    report: TrainReport,
    checkpoint: PathBuf,
    report_path: PathBuf,
}

struct AblationFixture {
    _dir: tempfile::TempDir,
    dataset_a: PathBuf,
    dataset_b: PathBuf,
    full: RunArtifacts,
    no_viba: RunArtifacts,
    no_motion_sampling: RunArtifacts,
    no_scene_gamma: RunArtifacts,
    full_rerun: RunArtifacts,
    /// Linear radiance ratio between the brightest and dimmest point-cloud
    /// colors of the fixture scene.
    radiance_span: f64,
    /// Wall time of the capture plus the four ablation trainings, seconds.
    ablation_wall_s: f64,
}

fn capture_head_scan(dir: &Path) -> egosplat::simulator::CaptureDataset {
    let scene = generate_scene(SceneKind::ColorGrid, 2_000, ABLATION_SEED).unwrap();
    let mut motion = MotionProfile::new(
        MotionKind::HeadScan { peak_deg_per_s: 200.0, translation_sweep_m: 0.05 },
        3.2,
    );
    motion.seed = ABLATION_SEED;
    let mut sensor = SensorProfile::new(256, 256, 240.0);
    sensor.readout = 0.016;
    sensor.frame_rate = 10.0;
    let degradation = PoseDegradation {
        rotation_walk_deg: DEGRADED_WALK_STEP_DEG,
        translation_walk_mm: 0.0,
        time_offset_ms: DEGRADED_TIME_OFFSET_MS,
    };
    capture(&scene, &motion, &sensor, &degradation, ABLATION_SEED, dir).unwrap()
}

fn train_variant(
    ds: &egosplat::simulator::CaptureDataset,
    out: &Path,
    viba: bool,
    motion_sampling: bool,
    scene_gamma: bool,
) -> RunArtifacts {
    let set = ds.to_training_set(viba, false).unwrap();
    let init = init_from_points(
        &ds.load_points().unwrap(),
        &InitConfig { gamma: ds.gamma, radiance_scale: ds.radiance_scale, ..InitConfig::default() },
    )
    .unwrap();
    let config = TrainConfig {
        iterations: ABLATION_ITERATIONS,
        rs_enable_iter: ABLATION_RS_ENABLE_ITER,
        eval_every: 2_500,
        use_viba_trajectory: viba,
        use_motion_sampling: motion_sampling,
        use_scene_gamma: scene_gamma,
        formation: FormationConfig { t_e_ref: ds.t_e_ref, ..FormationConfig::default() },
        ..TrainConfig::default()
    };
    let (scene, report) = train(&set, init, &config).unwrap();
    std::fs::create_dir_all(out).unwrap();
    let checkpoint = out.join("scene.txt");
    let report_path = out.join("report.json");
    scene.save_checkpoint(&checkpoint).unwrap();
    report.save_json(&report_path).unwrap();
    RunArtifacts { report, checkpoint, report_path }
}

fn ablation() -> &'static AblationFixture {
    static FIXTURE: OnceLock<AblationFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let started = Instant::now();
        let dataset_a = dir.path().join("capture_a");
        let ds = capture_head_scan(&dataset_a);

        let points = ds.load_points().unwrap();
        let luminance =
            |c: &[f64; 3]| (c[0] + c[1] + c[2]) / 3.0;
        let max_lum =
            points.iter().map(|(_, c)| luminance(c)).fold(f64::MIN, f64::max);
        let min_lum = points
            .iter()
            .map(|(_, c)| luminance(c))
            .filter(|&l| l > 0.0)
            .fold(f64::MAX, f64::min);

        let full = train_variant(&ds, &dir.path().join("full"), true, true, true);
        let no_viba = train_variant(&ds, &dir.path().join("no_viba"), false, true, true);
        let no_motion_sampling =
            train_variant(&ds, &dir.path().join("no_motion_sampling"), true, false, true);
        let no_scene_gamma =
            train_variant(&ds, &dir.path().join("no_scene_gamma"), true, true, false);
        let ablation_wall_s = started.elapsed().as_secs_f64();

        let dataset_b = dir.path().join("capture_b");
        let ds_rerun = capture_head_scan(&dataset_b);
        let full_rerun =
            train_variant(&ds_rerun, &dir.path().join("full_rerun"), true, true, true);

        AblationFixture {
            _dir: dir,
            dataset_a,
            dataset_b,
            full,
            no_viba,
            no_motion_sampling,
            no_scene_gamma,
            full_rerun,
            radiance_span: max_lum / min_lum,
            ablation_wall_s,
        }
    })
}

#[test]
fn criterion_05_ablations_order_and_margin() {
    let fx = ablation();
    let full = fx.full.report.final_psnr_db;
    let no_viba = fx.no_viba.report.final_psnr_db;
    let no_ms = fx.no_motion_sampling.report.final_psnr_db;
    let viba_margin = full - no_viba;
    let ms_margin = full - no_ms;
    let ok = viba_margin >= VIBA_MARGIN_DB
        && ms_margin >= MOTION_SAMPLING_MARGIN_DB
        && fx.ablation_wall_s < ABLATION_RUNTIME_S;
    conclude(
        5,
        "ablation ordering",
        ok,
        format!(
            "full {full:.2} dB, degraded-trajectory margin {viba_margin:.2} dB \
             (need ≥ {VIBA_MARGIN_DB}), single-pose margin {ms_margin:.2} dB \
             (need ≥ {MOTION_SAMPLING_MARGIN_DB}), ablation wall {:.0} s",
            fx.ablation_wall_s
        ),
    );
}

#[test]
fn criterion_06_gamma_storage_wins_on_a_two_decade_scene() {
    let fx = ablation();
    let full = fx.full.report.final_psnr_db;
    let no_gamma = fx.no_scene_gamma.report.final_psnr_db;
    let margin = full - no_gamma;
    let ok = fx.radiance_span >= RADIANCE_SPAN_MIN && margin > 0.0;
    conclude(
        6,
        "compressed color storage on a high-dynamic-range scene",
        ok,
        format!(
            "scene radiance span {:.0}x, gamma-storage margin {margin:.2} dB",
            fx.radiance_span
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7 — training on shot-noisy captures beats the noisy inputs when
// both are scored against the clean references.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_training_on_noisy_captures_denoises() {
    let dir = tempfile::tempdir().expect("tempdir");
    let scene = generate_scene(SceneKind::BoxRoom, 400, 5).unwrap();
    let mut motion = MotionProfile::new(MotionKind::Orbit { deg_per_s: 10.0 }, 3.2);
    motion.seed = 5;
    let mut sensor = SensorProfile::new(128, 128, 120.0);
    sensor.readout = 0.016;
    sensor.frame_rate = 10.0;
    sensor.exposure = ExposurePolicy::Fixed { t_e: 1e-3 };
    sensor.photons_per_unit = 50.0;
    let ds = capture(&scene, &motion, &sensor, &PoseDegradation::none(), 5, dir.path()).unwrap();

    let noisy_set = ds.to_training_set(true, false).unwrap();
    let clean_set = ds.to_training_set(true, true).unwrap();
    let (_, eval_idx) = split_holdout(noisy_set.frames.len(), 8).unwrap();

    let mask = ds.maps.valid();
    let baseline: f64 = eval_idx
        .iter()
        .map(|&i| psnr(&noisy_set.frames[i].image, &clean_set.frames[i].image, mask).unwrap())
        .sum::<f64>()
        / eval_idx.len() as f64;

    let init = init_from_points(
        &ds.load_points().unwrap(),
        &InitConfig { gamma: ds.gamma, radiance_scale: ds.radiance_scale, ..InitConfig::default() },
    )
    .unwrap();
    let config = TrainConfig {
        iterations: 3_000,
        rs_enable_iter: 750,
        eval_every: 1_500,
        formation: FormationConfig { t_e_ref: ds.t_e_ref, ..FormationConfig::default() },
        ..TrainConfig::default()
    };
    let (trained, _) = train(&noisy_set, init, &config).unwrap();

    let scores = score_frames(
        &clean_set,
        &trained,
        &eval_idx,
        FormationMode::Full,
        &config.formation,
    )
    .unwrap();
    let recon = scores.iter().map(|s| s.psnr_db).sum::<f64>() / scores.len() as f64;

    let margin = recon - baseline;
    let ok = margin >= NOISE2NOISE_MARGIN_DB;
    conclude(
        7,
        "denoising through multi-view training",
        ok,
        format!(
            "reconstruction vs clean {recon:.2} dB, noisy input vs clean {baseline:.2} dB, \
             margin {margin:.2} dB (need ≥ {NOISE2NOISE_MARGIN_DB})"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 — formation-model algebra: the gain/scale trade, the response
// round trip, and the PSNR closed form.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_formation_model_algebra() {
    let scene = random_scene(8, 17);
    let cam = CameraModel::pinhole(60.0, 48, 48);
    let traj = yaw_trajectory(2.0, 0.1);
    let maps = patterned_maps(&cam);
    let cfg = FormationConfig::default();

    // (a) Halving the gain while doubling the radiance scale leaves every
    // pixel unchanged: only the product enters the weight map.
    let m_full_gain = meta(0.03, 0.016, 0.001, 2.0);
    let m_half_gain = meta(0.03, 0.016, 0.001, 1.0);
    let mut scene_double_scale = scene.clone();
    scene_double_scale.radiance_scale *= 2.0;
    let plan = plan_motion_samples(&traj, &cam, &m_full_gain, &anchor_grid(&cam, 2.5, 12), &cfg)
        .unwrap();
    let a = form_image(&scene, &traj, &cam, &m_full_gain, &maps, &plan, FormationMode::Full, &cfg)
        .unwrap();
    let b = form_image(
        &scene_double_scale,
        &traj,
        &cam,
        &m_half_gain,
        &maps,
        &plan,
        FormationMode::Full,
        &cfg,
    )
    .unwrap();
    let trade_err = a
        .pixels
        .data
        .iter()
        .zip(&b.pixels.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);

    // (b) Response round trip: unclamped formed values decompress back to
    // the linear image the context reports.
    let ctx = form_image_with_context(
        &scene,
        &traj,
        &cam,
        &m_full_gain,
        &maps,
        &plan,
        FormationMode::Full,
        &cfg,
    )
    .unwrap();
    let mut round_trip_err = 0.0f64;
    for (y, x) in ctx.formed().pixels.data.iter().zip(&ctx.linear().data) {
        if *y > 0.0 && *y < 1.0 {
            round_trip_err = round_trip_err.max((y.powf(scene.gamma) - x).abs() / x.max(1.0));
        }
    }

    // (c) A uniform difference of 0.1 scores exactly 20 dB.
    let img_a = ImageRgb::filled(32, 32, [0.3, 0.3, 0.3]);
    let img_b = ImageRgb::filled(32, 32, [0.4, 0.4, 0.4]);
    let psnr_db = psnr(&img_a, &img_b, &vec![true; 32 * 32]).unwrap();
    let psnr_err = (psnr_db - PSNR_CLOSED_FORM_DB).abs();

    let ok = trade_err <= ALGEBRA_TOL && round_trip_err <= ALGEBRA_TOL && psnr_err <= ALGEBRA_TOL;
    conclude(
        8,
        "formation-model algebra",
        ok,
        format!(
            "gain/scale trade error {trade_err:.2e}, response round-trip error \
             {round_trip_err:.2e}, uniform-difference PSNR error {psnr_err:.2e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9 — the every-eighth-frame holdout split.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_every_eighth_frame_holdout_split() {
    let (train_idx, eval_idx) = split_holdout(1611, 8).unwrap();
    let pattern_ok = eval_idx.iter().all(|i| i % 8 == 0)
        && train_idx.iter().all(|i| i % 8 != 0)
        && train_idx.len() + eval_idx.len() == 1611;
    let ok = pattern_ok && eval_idx.len() == 202 && train_idx.len() == 1409;
    conclude(
        9,
        "holdout split",
        ok,
        format!("1611 frames split into {} train / {} eval", train_idx.len(), eval_idx.len()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10 — same-seed reruns reproduce the capture and the metrics
// exactly.
// ---------------------------------------------------------------------------

fn dir_files(root: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            if entry.file_type().unwrap().is_dir() {
                stack.push(entry.path());
            } else {
                files.push(entry.path().strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_10_same_seed_runs_are_identical() {
    let fx = ablation();

    // The two captures must be byte-identical, file for file.
    let files_a = dir_files(&fx.dataset_a);
    let files_b = dir_files(&fx.dataset_b);
    let mut dataset_mismatches: Vec<String> = Vec::new();
    if files_a != files_b {
        dataset_mismatches.push("file listings differ".to_string());
    } else {
        for rel in &files_a {
            let a = std::fs::read(fx.dataset_a.join(rel)).unwrap();
            let b = std::fs::read(fx.dataset_b.join(rel)).unwrap();
            if a != b {
                dataset_mismatches.push(rel.display().to_string());
            }
        }
    }

    // The retrained checkpoint must match byte for byte, and the metric
    // files must agree on everything except wall time.
    let ckpt_equal = std::fs::read(&fx.full.checkpoint).unwrap()
        == std::fs::read(&fx.full_rerun.checkpoint).unwrap();
    let mut report_a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fx.full.report_path).unwrap()).unwrap();
    let mut report_b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fx.full_rerun.report_path).unwrap())
            .unwrap();
    report_a["wall_seconds"] = 0.into();
    report_b["wall_seconds"] = 0.into();
    let reports_equal = report_a == report_b;
    let psnr_delta =
        (fx.full.report.final_psnr_db - fx.full_rerun.report.final_psnr_db).abs();

    let ok = dataset_mismatches.is_empty()
        && ckpt_equal
        && reports_equal
        && psnr_delta <= REPRO_TOL_DB;
    conclude(
        10,
        "same-seed reproducibility",
        ok,
        format!(
            "{} capture files identical, checkpoint identical: {ckpt_equal}, metric files \
             identical (excluding wall time): {reports_equal}, holdout PSNR delta {psnr_delta:.1e} \
             dB (mismatched files: {:?})",
            files_a.len(),
            dataset_mismatches
        ),
    );
}
