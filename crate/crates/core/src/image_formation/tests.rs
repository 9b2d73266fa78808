use super::*;
use crate::geometry::Pose;
use crate::rasterizer::rasterize;
use crate::scene::opacity_preactivation;
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera() -> CameraModel {
    CameraModel::pinhole(20.0, 17, 17)
}

fn mid_scene(seed: u64, n: usize) -> GaussianScene {
    // Colors and opacities chosen so formed values stay strictly inside
    // (0,1): no clamp or termination kinks for the gradient checks.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::empty(2.2, 1.0);
    for _ in 0..n {
        let z = rng.random_range(1.4..2.8);
        scene.push(
            nalgebra::Vector3::new(
                rng.random_range(-0.3 * z..0.3 * z),
                rng.random_range(-0.3 * z..0.3 * z),
                z,
            ),
            UnitQuaternion::from_euler_angles(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
            nalgebra::Vector3::new(
                rng.random_range(-2.6..-1.8),
                rng.random_range(-2.6..-1.8),
                rng.random_range(-2.6..-1.8),
            ),
            opacity_preactivation(rng.random_range(0.2..0.5)),
            nalgebra::Vector3::new(
                rng.random_range(0.3..0.85),
                rng.random_range(0.3..0.85),
                rng.random_range(0.3..0.85),
            ),
        );
    }
    scene
}

fn static_traj(lo: f64, hi: f64) -> Trajectory {
    Trajectory::new(vec![(lo, Pose::identity()), (hi, Pose::identity())]).unwrap()
}

/// Constant-rate yaw at 1 kHz knots; slerp reproduces the rotation exactly
/// between knots because the motion is geodesic.
fn yaw_traj(lo: f64, hi: f64, omega: f64) -> Trajectory {
    let dt = 1e-3;
    let steps = ((hi - lo) / dt).ceil() as usize + 1;
    let knots = (0..=steps)
        .map(|i| {
            let t = lo + i as f64 * dt;
            let rot = UnitQuaternion::from_axis_angle(&nalgebra::Vector3::y_axis(), omega * t);
            (t, Pose::new(rot, nalgebra::Vector3::zeros()))
        })
        .collect();
    Trajectory::new(knots).unwrap()
}

fn anchor_grid(cam: &CameraModel, depth: f64) -> Vec<DepthAnchor> {
    let mut anchors = Vec::new();
    for v in (2..cam.height).step_by(4) {
        for u in (2..cam.width).step_by(4) {
            anchors.push(DepthAnchor { u: u as f64, v: v as f64, depth });
        }
    }
    anchors
}

fn meta(t0: f64, readout: f64, exposure: f64, gain: f64) -> FrameMeta {
    FrameMeta { frame_id: 0, t0, readout, exposure, gain }
}

fn response(c: f64, gamma: f64) -> f64 {
    c.max(0.0).powf(gamma).powf(1.0 / gamma).clamp(0.0, 1.0)
}

const BG: Vector3<f64> = Vector3::new(0.2, 0.2, 0.2);

fn config() -> FormationConfig {
    FormationConfig { background: BG, ..FormationConfig::default() }
}

#[test]
fn static_camera_plans_single_sample() {
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let m = meta(0.5, 0.016, 0.001, 1.0);
    let plan =
        plan_motion_samples(&traj, &cam, &m, &anchor_grid(&cam, 2.0), &config()).unwrap();
    assert_eq!(plan.len(), 1);
    // The single sample sits at the bracket midpoint.
    assert!((plan.times[0] - (0.5 + 0.017 / 2.0)).abs() < 1e-12);
}

#[test]
fn fast_rotation_needs_eight_samples() {
    // focal 200 px, yaw 2.2 rad/s, 16 ms bracket: every anchor moves at
    // least focal·ω·Δt ≈ 7.04 px (off-axis anchors a hair more at this tiny
    // field of view), so the full-bracket median is in (7, 8) and the
    // smallest N with all sub-bracket medians < 1 px is exactly 8.
    let cam = CameraModel::pinhole(200.0, 17, 17);
    let traj = yaw_traj(-0.01, 0.03, 2.2);
    let m = meta(0.0, 0.016, 1e-6, 1.0);
    let anchors = anchor_grid(&cam, 2.0);
    let cfg = config();
    let full = crate::geometry::reprojection_displacements(
        &traj,
        &cam,
        &anchors,
        (0.0, m.readout + m.exposure),
    )
    .unwrap();
    let full_median = crate::stats::median(&full.magnitudes);
    assert!(full_median > 7.0 && full_median < 8.0, "oracle median {full_median}");
    // Brute-force oracle: smallest n whose sub-bracket medians all pass.
    let bracket = m.readout + m.exposure;
    let oracle_n = (1..=16)
        .find(|&n| {
            (0..n).all(|i| {
                let a = i as f64 * bracket / n as f64;
                let b = (i + 1) as f64 * bracket / n as f64;
                let d =
                    crate::geometry::reprojection_displacements(&traj, &cam, &anchors, (a, b))
                        .unwrap();
                crate::stats::median(&d.magnitudes) < cfg.threshold_px
            })
        })
        .unwrap();
    assert_eq!(oracle_n, 8);
    let plan = plan_motion_samples(&traj, &cam, &m, &anchors, &cfg).unwrap();
    assert_eq!(plan.len(), 8);
}

#[test]
fn median_exactly_at_threshold_is_rejected() {
    // Strict-< rule: a threshold set to the exact N=1 median forces N=2.
    let cam = CameraModel::pinhole(100.0, 17, 17);
    let traj = yaw_traj(-0.01, 0.03, 0.9);
    let m = meta(0.0, 0.016, 1e-6, 1.0);
    let anchors = anchor_grid(&cam, 2.0);
    let d = crate::geometry::reprojection_displacements(
        &traj,
        &cam,
        &anchors,
        (0.0, m.readout + m.exposure),
    )
    .unwrap();
    let exact = crate::stats::median(&d.magnitudes);
    let cfg = FormationConfig { threshold_px: exact, ..config() };
    let plan = plan_motion_samples(&traj, &cam, &m, &anchors, &cfg).unwrap();
    assert_eq!(plan.len(), 2);
}

#[test]
fn no_anchors_falls_back_to_rotation_bound() {
    let cam = CameraModel::pinhole(200.0, 17, 17);
    let traj = yaw_traj(-0.01, 0.03, 2.2);
    let m = meta(0.0, 0.016, 1e-6, 1.0);
    // focal · ω · bracket ≈ 7.04 px → same N = 8 as the anchored case here
    // (the tiny field of view keeps anchored medians within a percent of
    // the pure-rotation bound).
    let plan = plan_motion_samples(&traj, &cam, &m, &[], &config()).unwrap();
    assert_eq!(plan.len(), 8);
}

#[test]
fn sample_cap_applies() {
    let cam = CameraModel::pinhole(200.0, 17, 17);
    let traj = yaw_traj(-0.01, 0.05, 40.0);
    let m = meta(0.0, 0.03, 1e-6, 1.0);
    let plan = plan_motion_samples(&traj, &cam, &m, &anchor_grid(&cam, 2.0), &config()).unwrap();
    assert_eq!(plan.len(), 16);
}

#[test]
fn assignment_tie_breaks_to_earlier_sample() {
    let m = meta(0.0, 0.008, 0.008, 1.0);
    let plan = MotionSamplePlan::uniform(&m, 2);
    // exposure (8 ms) equals the sample interval, below the 2δ coverage
    // threshold → single nearest sample per pixel.
    assert_eq!(plan.assigned_range(0.0), (0, 0));
    // ratio 0.5: window middle falls exactly between the two sample
    // centers; the tie goes to the earlier sample.
    assert_eq!(plan.assigned_range(0.5), (0, 0));
    assert_eq!(plan.assigned_range(0.75), (1, 1));
    assert_eq!(plan.assigned_range(1.0), (1, 1));
}

#[test]
fn long_exposure_covers_all_overlapped_samples() {
    let m = meta(0.0, 0.001, 0.015, 1.0);
    let plan = MotionSamplePlan::uniform(&m, 8);
    let delta = plan.bracket() / 8.0;
    assert!(m.exposure >= 2.0 * delta);
    for &ratio in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        let (lo, hi) = plan.assigned_range(ratio);
        assert!(lo <= hi);
        assert!(hi - lo >= 6, "exposure spans most of the bracket: ({lo},{hi})");
        let start = ratio * m.readout;
        let end = start + m.exposure;
        for (k, &t) in plan.times.iter().enumerate() {
            let center = t - m.t0;
            let covered = center >= start - 1e-12 && center <= end + 1e-12;
            assert_eq!(
                (lo..=hi).contains(&k),
                covered,
                "ratio {ratio} sample {k} center {center}"
            );
        }
    }
}

#[test]
fn single_sample_static_formation_equals_direct_render() {
    let scene = mid_scene(1, 6);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let cfg = config();
    let m = meta(0.4, 0.016, cfg.t_e_ref, 1.0);
    let maps = PixelMaps::uniform(cam.width, cam.height, false);
    let plan = MotionSamplePlan::single(&m);
    let formed = form_image(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg)
        .unwrap();
    // ω ≡ 1 here (gain 1, V ≡ 1, s = 1, t_e = t_e_ref), so the formed image
    // must be φ(decompress(rasterize(...))) pixel for pixel.
    let direct = rasterize(&scene, &cam, &traj.query_pose(plan.times[0]).unwrap(), BG).unwrap();
    for i in 0..direct.color.data.len() {
        let want = response(direct.color.data[i], scene.gamma);
        assert_eq!(formed.pixels.data[i], want, "pixel value {i}");
    }
}

#[test]
fn static_scene_center_row_equals_full_mode() {
    let scene = mid_scene(2, 5);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let cfg = config();
    let m = meta(0.3, 0.016, 0.002, 1.4);
    let maps = PixelMaps::uniform(cam.width, cam.height, false);
    let plan = plan_motion_samples(&traj, &cam, &m, &anchor_grid(&cam, 2.0), &cfg).unwrap();
    assert_eq!(plan.len(), 1);
    let full =
        form_image(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg).unwrap();
    let center =
        form_image(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::CenterRowOnly, &cfg)
            .unwrap();
    assert_eq!(full.pixels.data, center.pixels.data);
}

#[test]
fn row_granularity_gather_matches_per_row_oracle() {
    let scene = mid_scene(3, 8);
    let cam = CameraModel::pinhole(60.0, 17, 17);
    let traj = yaw_traj(0.05, 0.15, 3.0);
    let cfg = config();
    let m = meta(0.1, 0.016, 2e-4, 1.3);
    let maps = PixelMaps::uniform(cam.width, cam.height, false);
    let plan = MotionSamplePlan::uniform(&m, cam.height);
    let formed =
        form_image(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg).unwrap();
    let omega_w = m.gain * scene.radiance_scale * (m.exposure / cfg.t_e_ref);
    for row in 0..cam.height {
        // Independent assignment: brute-force nearest sample center to the
        // middle of this row's exposure window, earlier on ties.
        let ratio = row as f64 / cam.height as f64;
        let mid = m.t0 + ratio * m.readout + 0.5 * m.exposure;
        let mut best = (f64::INFINITY, 0usize);
        for (k, &t) in plan.times.iter().enumerate() {
            let d = (t - mid).abs();
            if d < best.0 - 1e-15 {
                best = (d, k);
            }
        }
        let pose = traj.query_pose(plan.times[best.1]).unwrap();
        let oracle = rasterize(&scene, &cam, &pose, BG).unwrap();
        for px in 0..cam.width {
            let got = formed.pixels.get(px, row);
            let full = oracle.color.get(px, row);
            for ch in 0..3 {
                let lin = omega_w * full[ch].max(0.0).powf(scene.gamma);
                let want = lin.powf(1.0 / scene.gamma).clamp(0.0, 1.0);
                assert!(
                    (got[ch] - want).abs() < 1e-6,
                    "row {row} px {px} ch {ch}: {} vs {want}",
                    got[ch]
                );
            }
        }
    }
}

#[test]
fn doubling_gain_and_halving_scale_is_identity() {
    let scene_a = mid_scene(4, 6);
    let mut scene_b = scene_a.clone();
    scene_b.radiance_scale = scene_a.radiance_scale / 2.0;
    let cam = camera();
    let traj = yaw_traj(0.0, 0.1, 1.0);
    let cfg = config();
    let meta_a = meta(0.05, 0.016, 0.001, 1.3);
    let meta_b = FrameMeta { gain: 2.0 * meta_a.gain, ..meta_a };
    let maps = PixelMaps::uniform(cam.width, cam.height, false);
    let plan = MotionSamplePlan::uniform(&meta_a, 4);
    let a = form_image(&scene_a, &traj, &cam, &meta_a, &maps, &plan, FormationMode::Full, &cfg)
        .unwrap();
    let b = form_image(&scene_b, &traj, &cam, &meta_b, &maps, &plan, FormationMode::Full, &cfg)
        .unwrap();
    assert_eq!(a.pixels.data, b.pixels.data);
}

#[test]
fn vignette_scales_linear_image_pointwise() {
    let scene = mid_scene(5, 5);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let cfg = config();
    let m = meta(0.5, 0.016, 0.001, 1.0);
    let plan = MotionSamplePlan::single(&m);
    let flat = PixelMaps::uniform(cam.width, cam.height, false);
    let mut vignette = ImageMono::filled(cam.width, cam.height, 1.0);
    for (i, v) in vignette.data.iter_mut().enumerate() {
        *v = 0.5 + 0.5 * ((i % 17) as f64 / 16.0);
    }
    let shaded =
        PixelMaps::new(IndexRatioImage::identity(cam.width, cam.height, false), vignette.clone())
            .unwrap();
    let ctx_flat = form_image_with_context(
        &scene, &traj, &cam, &m, &flat, &plan, FormationMode::Full, &cfg,
    )
    .unwrap();
    let ctx_shaded = form_image_with_context(
        &scene, &traj, &cam, &m, &shaded, &plan, FormationMode::Full, &cfg,
    )
    .unwrap();
    for i in 0..cam.width * cam.height {
        for ch in 0..3 {
            let a = ctx_flat.linear().data[3 * i + ch] * vignette.data[i];
            let b = ctx_shaded.linear().data[3 * i + ch];
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "pixel {i}");
        }
    }
}

#[test]
fn longer_exposure_never_darkens_linear_values() {
    let scene = mid_scene(6, 5);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let cfg = config();
    let maps = PixelMaps::uniform(cam.width, cam.height, false);
    let mut previous: Option<Vec<f64>> = None;
    for &te in &[5e-4, 1e-3, 2e-3] {
        let m = meta(0.4, 0.016, te, 1.0);
        let plan = MotionSamplePlan::single(&m);
        let ctx = form_image_with_context(
            &scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg,
        )
        .unwrap();
        if let Some(prev) = &previous {
            for (a, b) in prev.iter().zip(&ctx.linear().data) {
                assert!(b >= a, "linear value decreased: {a} -> {b}");
            }
        }
        previous = Some(ctx.linear().data.clone());
    }
}

#[test]
fn response_round_trips_formed_values() {
    let scene = mid_scene(7, 6);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let cfg = config();
    let m = meta(0.5, 0.016, 0.001, 1.0);
    let plan = MotionSamplePlan::single(&m);
    let ctx = form_image_with_context(
        &scene, &traj, &cam, &m, &maps_uniform(&cam), &plan, FormationMode::Full, &cfg,
    )
    .unwrap();
    for (y, x) in ctx.formed().pixels.data.iter().zip(&ctx.linear().data) {
        if *y > 0.0 && *y < 1.0 {
            let back = y.powf(scene.gamma);
            assert!((back - x).abs() <= 1e-12 * x.max(1.0));
        }
    }
}

fn maps_uniform(cam: &CameraModel) -> PixelMaps {
    PixelMaps::uniform(cam.width, cam.height, false)
}

#[test]
fn no_gamma_mode_forms_in_linear_space() {
    let scene = mid_scene(8, 5);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let cfg = config();
    let m = meta(0.5, 0.016, cfg.t_e_ref, 1.0);
    let plan = MotionSamplePlan::single(&m);
    let formed =
        form_image(&scene, &traj, &cam, &m, &maps_uniform(&cam), &plan, FormationMode::NoGamma, &cfg)
            .unwrap();
    let direct = rasterize(&scene, &cam, &traj.query_pose(plan.times[0]).unwrap(), BG).unwrap();
    for i in 0..direct.color.data.len() {
        assert_eq!(formed.pixels.data[i], direct.color.data[i].max(0.0).clamp(0.0, 1.0));
    }
}

#[test]
fn formation_gradients_match_finite_differences() {
    let scene = mid_scene(9, 5);
    let cam = camera();
    let traj = yaw_traj(0.0, 0.1, 6.0);
    let cfg = config();
    let m = meta(0.04, 0.016, 0.002, 1.2);
    let mut vignette = ImageMono::filled(cam.width, cam.height, 1.0);
    for (i, v) in vignette.data.iter_mut().enumerate() {
        *v = 0.7 + 0.3 * ((i % 13) as f64 / 12.0);
    }
    let maps =
        PixelMaps::new(IndexRatioImage::identity(cam.width, cam.height, false), vignette).unwrap();
    let plan = plan_motion_samples(&traj, &cam, &m, &anchor_grid(&cam, 2.0), &cfg).unwrap();
    assert!(plan.len() > 1, "test should exercise the multi-sample path");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut upstream = ImageRgb::zeros(cam.width, cam.height);
    for v in &mut upstream.data {
        *v = rng.random_range(-1.0..1.0);
    }
    let loss = |s: &GaussianScene| -> f64 {
        let img =
            form_image(s, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg).unwrap();
        img.pixels.data.iter().zip(&upstream.data).map(|(c, u)| c * u).sum()
    };
    let ctx = form_image_with_context(
        &scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &cfg,
    )
    .unwrap();
    let mut grads = GradientBuffer::zeros(scene.len());
    ctx.backward_into(&scene, &upstream, &mut grads).unwrap();
    assert!(grads.check_finite());

    let h = 1e-5;
    let check = |analytic: f64, perturb: &dyn Fn(&mut GaussianScene, f64), label: String| {
        let mut plus = scene.clone();
        perturb(&mut plus, h);
        let mut minus = scene.clone();
        perturb(&mut minus, -h);
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        if scale > 1e-6 {
            let rel = (analytic - numeric).abs() / scale;
            assert!(rel < 1e-3, "{label}: analytic {analytic} vs fd {numeric} (rel {rel:.2e})");
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
                    s.rotations[i] = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
                        coords.w, coords.x, coords.y, coords.z,
                    ));
                },
                format!("quat[{i}][{k}]"),
            );
        }
        check(grads.opacities_raw[i], &|s, d| s.opacities_raw[i] += d, format!("opacity[{i}]"));
    }
    check(grads.radiance_scale, &|s, d| s.radiance_scale += d, "radiance_scale".to_string());
}

#[test]
fn bracket_outside_trajectory_domain_is_an_error() {
    let cam = camera();
    let traj = static_traj(0.0, 0.01);
    let m = meta(0.005, 0.016, 0.001, 1.0);
    let err = plan_motion_samples(&traj, &cam, &m, &[], &config()).unwrap_err();
    assert!(matches!(err, FormationError::TrajectoryTooShort { .. }), "{err}");
}

#[test]
fn map_size_mismatch_is_an_error() {
    let scene = mid_scene(10, 2);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let m = meta(0.5, 0.016, 0.001, 1.0);
    let maps = PixelMaps::uniform(8, 8, false);
    let plan = MotionSamplePlan::single(&m);
    let err = form_image(&scene, &traj, &cam, &m, &maps, &plan, FormationMode::Full, &config())
        .unwrap_err();
    assert!(matches!(err, FormationError::MapSizeMismatch { .. }), "{err}");
}

#[test]
fn plan_from_different_frame_is_rejected() {
    let scene = mid_scene(11, 2);
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let m = meta(0.5, 0.016, 0.001, 1.0);
    let other = meta(0.6, 0.016, 0.001, 1.0);
    let plan = MotionSamplePlan::single(&other);
    let err = form_image(
        &scene, &traj, &cam, &m, &maps_uniform(&cam), &plan, FormationMode::Full, &config(),
    )
    .unwrap_err();
    assert!(matches!(err, FormationError::PlanMismatch { .. }), "{err}");
}

#[test]
fn non_positive_threshold_is_rejected() {
    let cam = camera();
    let traj = static_traj(0.0, 1.0);
    let m = meta(0.5, 0.016, 0.001, 1.0);
    let cfg = FormationConfig { threshold_px: 0.0, ..config() };
    assert!(matches!(
        plan_motion_samples(&traj, &cam, &m, &[], &cfg),
        Err(FormationError::BadConfig { .. })
    ));
}
