//! Camera models (pinhole, equidistant fisheye) and per-frame sensor metadata.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraKind {
    Pinhole,
    EquidistantFisheye,
}

/// Intrinsic camera model. Pixel coordinates are sample positions: integer
/// `(u, v)` is the center of pixel `(u, v)`, `u` grows rightward, `v`
/// downward. The camera frame is x-right, y-down, z-forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub kind: CameraKind,
    /// Focal length in pixels (isotropic).
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Radial polynomial coefficients (`k1..k4` of the equidistant model on
    /// θ); empty for the rectified/ideal model.
    #[serde(default)]
    pub distortion: Vec<f64>,
}

impl CameraModel {
    pub fn pinhole(focal: f64, width: usize, height: usize) -> Self {
        Self {
            kind: CameraKind::Pinhole,
            focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            distortion: Vec::new(),
        }
    }

    pub fn equidistant(focal: f64, width: usize, height: usize, distortion: Vec<f64>) -> Self {
        Self {
            kind: CameraKind::EquidistantFisheye,
            focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            distortion,
        }
    }

    pub fn is_distortion_free(&self) -> bool {
        self.distortion.iter().all(|&k| k == 0.0)
    }

    /// Project a camera-frame point to pixel coordinates. `None` when the
    /// point cannot be imaged (pinhole: z ≤ 0; fisheye: direction at or
    /// beyond 180° that the model cannot represent). No bounds check.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        match self.kind {
            CameraKind::Pinhole => {
                if p.z <= 0.0 {
                    return None;
                }
                Some((self.focal * p.x / p.z + self.cx, self.focal * p.y / p.z + self.cy))
            }
            CameraKind::EquidistantFisheye => {
                let r = p.x.hypot(p.y);
                if r == 0.0 {
                    return if p.z > 0.0 { Some((self.cx, self.cy)) } else { None };
                }
                let theta = r.atan2(p.z); // in [0, π)
                if theta >= std::f64::consts::PI - 1e-9 {
                    return None;
                }
                let radius = self.focal * self.distort_theta(theta);
                Some((self.cx + radius * p.x / r, self.cy + radius * p.y / r))
            }
        }
    }

    /// Ray through pixel `(u, v)` in canonical (non-normalized) form:
    /// pinhole rays have z = 1, fisheye rays unit norm. Canonical scaling
    /// keeps `project(unproject(u,v))` bit-exact for identity pinhole
    /// rectifications with power-of-two focals.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        let dx = (u - self.cx) / self.focal;
        let dy = (v - self.cy) / self.focal;
        match self.kind {
            CameraKind::Pinhole => Vector3::new(dx, dy, 1.0),
            CameraKind::EquidistantFisheye => {
                let r_d = dx.hypot(dy);
                if r_d == 0.0 {
                    return Vector3::new(0.0, 0.0, 1.0);
                }
                let theta = self.undistort_theta(r_d);
                let s = theta.sin() / r_d;
                Vector3::new(s * dx, s * dy, theta.cos())
            }
        }
    }

    /// θ_d = θ·(1 + k1·θ² + k2·θ⁴ + k3·θ⁶ + k4·θ⁸)
    fn distort_theta(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        let mut poly = 1.0;
        let mut pow = t2;
        for &k in &self.distortion {
            poly += k * pow;
            pow *= t2;
        }
        theta * poly
    }

    /// Invert the distortion polynomial by Newton iteration.
    fn undistort_theta(&self, theta_d: f64) -> f64 {
        if self.is_distortion_free() {
            return theta_d;
        }
        let mut theta = theta_d;
        for _ in 0..20 {
            let t2 = theta * theta;
            let (mut f, mut df) = (theta, 1.0);
            let mut pow = t2;
            for (i, &k) in self.distortion.iter().enumerate() {
                let e = (2 * (i + 1)) as f64;
                f += k * theta * pow;
                df += k * (e + 1.0) * pow;
                pow *= t2;
            }
            let step = (f - theta_d) / df;
            theta -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        theta
    }

    /// Whether a pixel coordinate lies inside the image (`0 ≤ u < width`).
    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    pub fn save_json(&self, path: &Path) -> Result<(), GeometryError> {
        let io_err = |source| GeometryError::Io { path: path.display().to_string(), source };
        let text = serde_json::to_string_pretty(self).expect("camera model serializes");
        std::fs::write(path, text).map_err(io_err)
    }

    pub fn load_json(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|e| GeometryError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// Per-image sensor record: first-row capture time, readout span, exposure
/// time, and analog gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeta {
    pub frame_id: u64,
    /// First-row capture time t(0), seconds.
    pub t0: f64,
    /// Time between first- and last-row capture, seconds.
    pub readout: f64,
    /// Exposure time t_e, seconds.
    pub exposure: f64,
    /// Analog gain multiplier.
    pub gain: f64,
}

impl FrameMeta {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let fail = |reason: String| Err(GeometryError::BadFrameMeta { reason });
        if !(self.readout >= 0.0) {
            return fail(format!("readout {} must be >= 0", self.readout));
        }
        if !(self.exposure > 0.0) {
            return fail(format!("exposure {} must be > 0", self.exposure));
        }
        if !(self.gain > 0.0) {
            return fail(format!("gain {} must be > 0", self.gain));
        }
        Ok(())
    }

    /// Row capture time `t0 + ratio·readout` for a row index ratio in `[0,1]`.
    pub fn pixel_time(&self, ratio: f64) -> Result<f64, GeometryError> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(GeometryError::RatioOutOfRange { ratio });
        }
        Ok(self.t0 + ratio * self.readout)
    }

    /// Full capture window `[t0, t0 + readout + exposure]`: the last row
    /// starts integrating at `t0 + readout` and finishes `exposure` later.
    pub fn bracket(&self) -> (f64, f64) {
        (self.t0, self.t0 + self.readout + self.exposure)
    }
}

/// Read `frame_id t0_ns readout_ns exposure_ns gain` records.
pub fn read_meta_file(path: &Path) -> Result<Vec<FrameMeta>, GeometryError> {
    let file = std::fs::File::open(path)
        .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse = |msg: &str| GeometryError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(parse("expected 5 fields: frame_id t0_ns readout_ns exposure_ns gain"));
        }
        let frame_id: u64 = fields[0].parse().map_err(|_| parse("bad frame id"))?;
        let t0_ns: i64 = fields[1].parse().map_err(|_| parse("bad t0_ns"))?;
        let readout_ns: i64 = fields[2].parse().map_err(|_| parse("bad readout_ns"))?;
        let exposure_ns: i64 = fields[3].parse().map_err(|_| parse("bad exposure_ns"))?;
        let gain: f64 = fields[4].parse().map_err(|_| parse("bad gain"))?;
        let meta = FrameMeta {
            frame_id,
            t0: t0_ns as f64 * 1e-9,
            readout: readout_ns as f64 * 1e-9,
            exposure: exposure_ns as f64 * 1e-9,
            gain,
        };
        meta.validate()?;
        out.push(meta);
    }
    Ok(out)
}

pub fn write_meta_file(path: &Path, metas: &[FrameMeta]) -> Result<(), GeometryError> {
    let io_err = |source| GeometryError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for m in metas {
        writeln!(
            w,
            "{} {} {} {} {:.17e}",
            m.frame_id,
            (m.t0 * 1e9).round() as i64,
            (m.readout * 1e9).round() as i64,
            (m.exposure * 1e9).round() as i64,
            m.gain
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
