//! Procedural ground-truth scenes. All kinds place their content around the
//! world origin inside a region of roughly unit half-extent, to be viewed
//! from the standard stand-off viewpoint on the -z axis.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimulatorError;
use crate::scene::{compress_radiance, GaussianScene, DEFAULT_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Flat grid of isolated colored blobs in the z = 0 plane.
    ColorGrid,
    /// Open-fronted box: back wall, floor, ceiling, and two side walls
    /// tiled with flattened surface-aligned Gaussians.
    BoxRoom,
    /// Random anisotropic Gaussians filling a box around the origin.
    Clutter,
}

/// Bright base hues cycled across scene elements (linear radiance).
const HUES: [[f64; 3]; 6] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.90, 0.15],
    [0.20, 0.25, 0.95],
    [0.90, 0.80, 0.15],
    [0.85, 0.20, 0.85],
    [0.15, 0.85, 0.85],
];

/// Radiance multipliers spanning two decades, brightest to dimmest.
const LEVELS: [f64; 5] = [1.0, 0.316227766016838, 0.1, 0.0316227766016838, 0.01];

/// Stored color for a hue/level pair: the linear radiance compressed into
/// the scene's response-space color representation.
fn level_color(hue: usize, level: usize) -> Vector3<f64> {
    let linear = Vector3::from(HUES[hue % HUES.len()]) * LEVELS[level % LEVELS.len()];
    linear.map(|c| compress_radiance(c, DEFAULT_GAMMA))
}

/// Rotation taking the local +z axis onto `normal`.
fn orient_to_normal(normal: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vector3::z(), normal)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI))
}

/// Build a deterministic ground-truth scene with `count` Gaussians.
pub fn generate_scene(
    kind: SceneKind,
    count: usize,
    seed: u64,
) -> Result<GaussianScene, SimulatorError> {
    if count == 0 {
        return Err(SimulatorError::BadParams { what: "scene count must be >= 1".into() });
    }
    let mut scene = GaussianScene::empty(DEFAULT_GAMMA, 1.0);
    if count == 1 {
        scene.push(
            Vector3::zeros(),
            UnitQuaternion::identity(),
            Vector3::repeat(0.25f64.ln()),
            3.0,
            Vector3::new(0.8, 0.7, 0.6).map(|c| compress_radiance(c, DEFAULT_GAMMA)),
        );
        return Ok(scene);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SceneKind::ColorGrid => {
            let side = (count as f64).sqrt().ceil() as usize;
            let spacing = 0.9 / (side - 1) as f64;
            let sigma = spacing * 0.16;
            let log_scale = Vector3::new(sigma.ln(), sigma.ln(), (sigma * 0.5).ln());
            for i in 0..count {
                let (row, col) = (i / side, i % side);
                let x = -0.45 + spacing * col as f64;
                let y = -0.45 + spacing * row as f64;
                let z = rng.random_range(-0.01..0.01);
                scene.push(
                    Vector3::new(x, y, z),
                    UnitQuaternion::identity(),
                    log_scale,
                    2.2,
                    level_color(i, i / HUES.len()),
                );
            }
        }
        SceneKind::BoxRoom => {
            // (center, normal, tangent-u, tangent-v, half-extents)
            let faces: [(Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>, [f64; 2]); 5] = [
                (Vector3::new(0.0, 0.0, 1.0), -Vector3::z(), Vector3::x(), Vector3::y(), [1.0, 0.8]),
                (Vector3::new(0.0, 0.8, 0.25), -Vector3::y(), Vector3::x(), Vector3::z(), [1.0, 0.75]),
                (Vector3::new(0.0, -0.8, 0.25), Vector3::y(), Vector3::x(), Vector3::z(), [1.0, 0.75]),
                (Vector3::new(-1.0, 0.0, 0.25), Vector3::x(), Vector3::z(), Vector3::y(), [0.75, 0.8]),
                (Vector3::new(1.0, 0.0, 0.25), -Vector3::x(), Vector3::z(), Vector3::y(), [0.75, 0.8]),
            ];
            let per_face = count.div_ceil(faces.len());
            let mut placed = 0;
            for (f, (center, normal, tu, tv, half)) in faces.iter().enumerate() {
                let n_face = per_face.min(count - placed);
                if n_face == 0 {
                    break;
                }
                let cols = (n_face as f64).sqrt().ceil() as usize;
                let rows = n_face.div_ceil(cols);
                let sigma = (half[0] / cols as f64).max(half[1] / rows as f64) * 0.8;
                for i in 0..n_face {
                    let (r, c) = (i / cols, i % cols);
                    let su = if cols > 1 { -1.0 + 2.0 * c as f64 / (cols - 1) as f64 } else { 0.0 };
                    let sv = if rows > 1 { -1.0 + 2.0 * r as f64 / (rows - 1) as f64 } else { 0.0 };
                    let jitter_u = rng.random_range(-0.15..0.15) * half[0] / cols as f64;
                    let jitter_v = rng.random_range(-0.15..0.15) * half[1] / rows as f64;
                    let mean = center
                        + tu * (su * half[0] * 0.9 + jitter_u)
                        + tv * (sv * half[1] * 0.9 + jitter_v);
                    let checker = (r + c) % 2;
                    let color = level_color(f + 3 * checker, (i / 2) % LEVELS.len());
                    scene.push(
                        mean,
                        orient_to_normal(normal),
                        Vector3::new(sigma.ln(), sigma.ln(), (sigma * 0.1).ln()),
                        1.5,
                        color,
                    );
                    placed += 1;
                }
            }
        }
        SceneKind::Clutter => {
            for i in 0..count {
                let mean = Vector3::new(
                    rng.random_range(-0.9..0.9),
                    rng.random_range(-0.9..0.9),
                    rng.random_range(-0.9..0.9),
                );
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let rotation = UnitQuaternion::from_scaled_axis(axis);
                let log_scale = Vector3::new(
                    rng.random_range(0.02f64..0.08).ln(),
                    rng.random_range(0.02f64..0.08).ln(),
                    rng.random_range(0.02f64..0.08).ln(),
                );
                let hue = rng.random_range(0..HUES.len());
                scene.push(
                    mean,
                    rotation,
                    log_scale,
                    rng.random_range(0.5..3.0),
                    level_color(hue, i % LEVELS.len()),
                );
            }
        }
    }
    Ok(scene)
}
