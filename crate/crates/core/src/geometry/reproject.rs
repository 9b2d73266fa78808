//! Reprojection displacement of depth anchors over a time window — the
//! motion-sampling heuristic's measure of rolling-shutter severity.

use super::{CameraModel, GeometryError, Trajectory};

/// A pixel with known camera-space z-depth, anchoring reprojection analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAnchor {
    pub u: f64,
    pub v: f64,
    /// Camera-space z-depth in meters (not ray range).
    pub depth: f64,
}

/// Displacement magnitudes for the anchors that stayed projectable, plus the
/// count of anchors excluded because motion put them behind the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacements {
    pub magnitudes: Vec<f64>,
    pub excluded_behind: usize,
}

/// For each anchor: lift to 3D with the pose at `window.0`, reproject with
/// the pose at `window.1`, and report `|pixel_b - pixel_a|`. Anchor order is
/// preserved among the included points.
pub fn reprojection_displacements(
    traj: &Trajectory,
    cam: &CameraModel,
    anchors: &[DepthAnchor],
    window: (f64, f64),
) -> Result<Displacements, GeometryError> {
    for (index, a) in anchors.iter().enumerate() {
        if !(a.depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth { index, depth: a.depth });
        }
    }
    let pose_a = traj.query_pose(window.0)?;
    let pose_b = traj.query_pose(window.1)?;
    let mut magnitudes = Vec::with_capacity(anchors.len());
    let mut excluded_behind = 0;
    for a in anchors {
        let ray = cam.unproject(a.u, a.v);
        if !(ray.z > 0.0) {
            excluded_behind += 1;
            continue;
        }
        let p_cam = ray * (a.depth / ray.z);
        let world = pose_a.transform_point(&p_cam);
        let p_b = pose_b.inverse_transform_point(&world);
        if !(p_b.z > 0.0) {
            excluded_behind += 1;
            continue;
        }
        match cam.project(&p_b) {
            Some((u, v)) => magnitudes.push((u - a.u).hypot(v - a.v)),
            None => excluded_behind += 1,
        }
    }
    Ok(Displacements { magnitudes, excluded_behind })
}
