//! Gaussian scene representation with gamma-compressed color, plus
//! initialization from a sparse point cloud and checkpoint/point-cloud I/O.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("point cloud is empty")]
    EmptyPointCloud,
    #[error("negative radiance {value} passed to gamma compression")]
    NegativeRadiance { value: f64 },
    #[error("scene parameter {name} = {value} must be positive")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("non-finite value in gaussian {index} ({field})")]
    NonFinite { index: usize, field: &'static str },
    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Set of 3D Gaussians stored as flat per-field arrays.
///
/// Scales are stored as logs and opacity as a logistic pre-activation so the
/// optimizer can run unconstrained; colors live in gamma-compressed radiance
/// space and are clamped to ≥ 0 at render time. The global radiance scale
/// `s` carries the scene's absolute brightness; per-frame gain/exposure
/// carry all frame-to-frame variation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub means: Vec<Vector3<f64>>,
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacities_raw: Vec<f64>,
    /// Gamma-compressed radiance, unconstrained storage.
    pub colors: Vec<Vector3<f64>>,
    pub gamma: f64,
    /// Global radiance scale s > 0.
    pub radiance_scale: f64,
}

pub const DEFAULT_GAMMA: f64 = 2.2;

/// Logistic opacity activation: ℝ → (0,1), strictly monotone.
#[inline]
pub fn activate_opacity(raw: f64) -> f64 {
    1.0 / (1.0 + (-raw).exp())
}

/// Inverse of the opacity activation.
#[inline]
pub fn opacity_preactivation(alpha: f64) -> f64 {
    (alpha / (1.0 - alpha)).ln()
}

/// Gamma compression r^(1/gamma) of non-negative linear radiance.
#[inline]
pub fn compress_radiance(r: f64, gamma: f64) -> f64 {
    r.powf(1.0 / gamma)
}

/// Inverse of `compress_radiance`.
#[inline]
pub fn decompress_radiance(c: f64, gamma: f64) -> f64 {
    c.powf(gamma)
}

impl GaussianScene {
    pub fn empty(gamma: f64, radiance_scale: f64) -> Self {
        Self {
            means: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacities_raw: Vec::new(),
            colors: Vec::new(),
            gamma,
            radiance_scale,
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(
        &mut self,
        mean: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        log_scale: Vector3<f64>,
        opacity_raw: f64,
        color: Vector3<f64>,
    ) {
        self.means.push(mean);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacities_raw.push(opacity_raw);
        self.colors.push(color);
    }

    /// World-frame covariance Σ = R·diag(exp(2·logS))·Rᵀ of gaussian `i`.
    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        let r = self.rotations[i].to_rotation_matrix();
        let d = self.log_scales[i].map(|l| (2.0 * l).exp());
        r.matrix() * Matrix3::from_diagonal(&d) * r.matrix().transpose()
    }

    /// Radius of the bounding sphere of the means around their centroid;
    /// used to scale the position learning rate.
    pub fn extent(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let centroid = self.means.iter().sum::<Vector3<f64>>() / self.len() as f64;
        self.means.iter().map(|m| (m - centroid).norm()).fold(0.0, f64::max)
    }

    /// Index of the first gaussian with a non-finite parameter, if any.
    pub fn check_finite(&self) -> Result<(), SceneError> {
        for i in 0..self.len() {
            let bad = |field| Err(SceneError::NonFinite { index: i, field });
            if !self.means[i].iter().all(|v| v.is_finite()) {
                return bad("mean");
            }
            if !self.rotations[i].coords.iter().all(|v| v.is_finite()) {
                return bad("rotation");
            }
            if !self.log_scales[i].iter().all(|v| v.is_finite()) {
                return bad("log_scale");
            }
            if !self.opacities_raw[i].is_finite() {
                return bad("opacity");
            }
            if !self.colors[i].iter().all(|v| v.is_finite()) {
                return bad("color");
            }
        }
        Ok(())
    }
}

/// Initialization settings for `init_from_points`.
#[derive(Debug, Clone)]
pub struct InitConfig {
    pub gamma: f64,
    pub radiance_scale: f64,
    /// Neighbor count for the initial-scale heuristic.
    pub knn: usize,
    /// Fallback scale in meters when a point has no usable neighborhood.
    pub default_scale: f64,
    /// Initial activated opacity in (0,1).
    pub initial_opacity: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            radiance_scale: 1.0,
            knn: 3,
            default_scale: 0.01,
            initial_opacity: 0.1,
        }
    }
}

/// One isotropic gaussian per input point: scale from the log of the mean
/// distance to the k nearest neighbors, identity rotation, uniform initial
/// opacity, color gamma-compressed from the point's linear color.
pub fn init_from_points(
    points: &[(Vector3<f64>, [f64; 3])],
    config: &InitConfig,
) -> Result<GaussianScene, SceneError> {
    if points.is_empty() {
        return Err(SceneError::EmptyPointCloud);
    }
    if !(config.gamma > 0.0) {
        return Err(SceneError::NonPositiveParam { name: "gamma", value: config.gamma });
    }
    if !(config.radiance_scale > 0.0) {
        return Err(SceneError::NonPositiveParam {
            name: "radiance_scale",
            value: config.radiance_scale,
        });
    }
    let mut scene = GaussianScene::empty(config.gamma, config.radiance_scale);
    let opacity_raw = opacity_preactivation(config.initial_opacity);
    let mut dists = Vec::with_capacity(points.len().saturating_sub(1));
    for (i, (p, color)) in points.iter().enumerate() {
        dists.clear();
        for (j, (q, _)) in points.iter().enumerate() {
            if i != j {
                dists.push((p - q).norm());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let k = config.knn.min(dists.len());
        let mean_dist = if k == 0 { 0.0 } else { dists[..k].iter().sum::<f64>() / k as f64 };
        let scale = if mean_dist > 0.0 { mean_dist } else { config.default_scale };
        for c in color {
            if *c < 0.0 {
                return Err(SceneError::NegativeRadiance { value: *c });
            }
        }
        scene.push(
            *p,
            UnitQuaternion::identity(),
            Vector3::repeat(scale.ln()),
            opacity_raw,
            Vector3::new(
                compress_radiance(color[0], config.gamma),
                compress_radiance(color[1], config.gamma),
                compress_radiance(color[2], config.gamma),
            ),
        );
    }
    Ok(scene)
}

const CHECKPOINT_MAGIC: &str = "# gaussian-scene v1";

impl GaussianScene {
    /// Plain-text checkpoint: a header carrying gamma and the radiance
    /// scale, then one `μ(3) q(4,xyzw) logS(3) α_pre c(3)` row per gaussian.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), SceneError> {
        let io_err = |source| SceneError::Io { path: path.display().to_string(), source };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{CHECKPOINT_MAGIC}").map_err(io_err)?;
        writeln!(w, "# gamma {:.17e}", self.gamma).map_err(io_err)?;
        writeln!(w, "# scale {:.17e}", self.radiance_scale).map_err(io_err)?;
        writeln!(w, "# count {}", self.len()).map_err(io_err)?;
        for i in 0..self.len() {
            let m = self.means[i];
            let q = self.rotations[i].coords;
            let s = self.log_scales[i];
            let c = self.colors[i];
            writeln!(
                w,
                "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                m.x, m.y, m.z, q.x, q.y, q.z, q.w, s.x, s.y, s.z, self.opacities_raw[i], c.x, c.y, c.z
            )
            .map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, SceneError> {
        let file = std::fs::File::open(path)
            .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
        let parse = |line: usize, msg: String| SceneError::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut gamma = None;
        let mut scale = None;
        let mut scene: Option<GaussianScene> = None;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line
                .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
            let trimmed = line.trim();
            if lineno == 0 {
                if trimmed != CHECKPOINT_MAGIC {
                    return Err(parse(1, format!("expected header '{CHECKPOINT_MAGIC}'")));
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                match fields.as_slice() {
                    ["gamma", v] => {
                        gamma = Some(v.parse().map_err(|_| {
                            parse(lineno + 1, "bad gamma".to_string())
                        })?)
                    }
                    ["scale", v] => {
                        scale = Some(v.parse().map_err(|_| {
                            parse(lineno + 1, "bad scale".to_string())
                        })?)
                    }
                    _ => {} // tolerate unknown comments
                }
                continue;
            }
            let scene = scene.get_or_insert_with(|| {
                GaussianScene::empty(gamma.unwrap_or(DEFAULT_GAMMA), scale.unwrap_or(1.0))
            });
            let mut vals = [0.0f64; 14];
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 14 {
                return Err(parse(lineno + 1, format!("expected 14 fields, got {}", fields.len())));
            }
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f
                    .parse()
                    .map_err(|_| parse(lineno + 1, format!("bad float field '{f}'")))?;
            }
            scene.push(
                Vector3::new(vals[0], vals[1], vals[2]),
                UnitQuaternion::from_quaternion(Quaternion::new(vals[6], vals[3], vals[4], vals[5])),
                Vector3::new(vals[7], vals[8], vals[9]),
                vals[10],
                Vector3::new(vals[11], vals[12], vals[13]),
            );
        }
        let mut scene = scene
            .unwrap_or_else(|| GaussianScene::empty(gamma.unwrap_or(DEFAULT_GAMMA), scale.unwrap_or(1.0)));
        if let (Some(g), Some(s)) = (gamma, scale) {
            scene.gamma = g;
            scene.radiance_scale = s;
        }
        scene.check_finite()?;
        Ok(scene)
    }
}

/// Load `x y z r g b` rows (colors in [0,1] linear).
pub fn load_point_cloud(path: &Path) -> Result<Vec<(Vector3<f64>, [f64; 3])>, SceneError> {
    let file = std::fs::File::open(path)
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(SceneError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 6 fields x y z r g b, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 6];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| SceneError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("bad float field '{f}'"),
            })?;
        }
        out.push((Vector3::new(vals[0], vals[1], vals[2]), [vals[3], vals[4], vals[5]]));
    }
    if out.is_empty() {
        return Err(SceneError::EmptyPointCloud);
    }
    Ok(out)
}

pub fn save_point_cloud(
    path: &Path,
    points: &[(Vector3<f64>, [f64; 3])],
) -> Result<(), SceneError> {
    let io_err = |source| SceneError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for (p, c) in points {
        writeln!(w, "{:.17e} {:.17e} {:.17e} {:.9} {:.9} {:.9}", p.x, p.y, p.z, c[0], c[1], c[2])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
