//! Continuous-time pose trajectory with piecewise linear/slerp interpolation.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{GeometryError, Pose};

/// Time-indexed pose sequence supporting continuous query between its first
/// and last knot. Queries outside the domain are errors, never clamped:
/// silent clamping would corrupt rolling-shutter timing at recording
/// boundaries.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(knots: Vec<(f64, Pose)>) -> Result<Self, GeometryError> {
        if knots.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        for (i, pair) in knots.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(GeometryError::NonMonotonicTimestamps { index: i + 1 });
            }
        }
        let (times, poses) = knots.into_iter().unzip();
        Ok(Self { times, poses })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one knot
    }

    /// Valid query interval `[first, last]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = self.domain();
        t >= lo && t <= hi
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, &Pose)> {
        self.times.iter().copied().zip(self.poses.iter())
    }

    /// Interpolated pose at `t`. Exact (bit-identical) at knot timestamps.
    pub fn query_pose(&self, t: f64) -> Result<Pose, GeometryError> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(GeometryError::OutOfDomain { t, lo, hi });
        }
        // First knot with time >= t.
        let i = self.times.partition_point(|&k| k < t);
        if self.times[i] == t {
            return Ok(self.poses[i]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let s = (t - t0) / (t1 - t0);
        Ok(Pose::interpolate(&self.poses[i - 1], &self.poses[i], s))
    }

    /// Left-compose a fixed rigid transform onto every knot (`g ∘ pose`).
    pub fn transformed(&self, g: &Pose) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            poses: self.poses.iter().map(|p| g.compose(p)).collect(),
        }
    }

    /// Shift every knot timestamp by `dt` seconds.
    pub fn time_shifted(&self, dt: f64) -> Trajectory {
        Trajectory {
            times: self.times.iter().map(|t| t + dt).collect(),
            poses: self.poses.clone(),
        }
    }

    /// Read the `timestamp_ns tx ty tz qx qy qz qw` record format.
    pub fn from_file(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)
            .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
        let mut knots = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line
                .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse = |lineno: usize, msg: &str| GeometryError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(parse(lineno, "expected 8 fields: timestamp_ns tx ty tz qx qy qz qw"));
            }
            let ts_ns: i64 =
                fields[0].parse().map_err(|_| parse(lineno, "bad integer timestamp"))?;
            let mut vals = [0.0; 7];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f.parse().map_err(|_| parse(lineno, "bad float field"))?;
            }
            let q = Quaternion::new(vals[6], vals[3], vals[4], vals[5]); // w, x, y, z
            if q.norm() < 1e-6 {
                return Err(parse(lineno, "near-zero quaternion"));
            }
            knots.push((
                ts_ns as f64 * 1e-9,
                Pose::new(UnitQuaternion::from_quaternion(q), Vector3::new(vals[0], vals[1], vals[2])),
            ));
        }
        Self::new(knots)
    }

    pub fn to_file(&self, path: &Path) -> Result<(), GeometryError> {
        let io_err = |source| GeometryError::Io { path: path.display().to_string(), source };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        for (t, pose) in self.knots() {
            let ts_ns = (t * 1e9).round() as i64;
            let tr = pose.translation;
            let q = pose.rotation.coords; // x, y, z, w
            writeln!(
                w,
                "{ts_ns} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                tr.x, tr.y, tr.z, q.x, q.y, q.z, q.w
            )
            .map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}
