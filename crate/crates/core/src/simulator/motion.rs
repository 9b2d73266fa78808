//! Head-motion-like camera trajectories sampled at IMU rate.
//!
//! All profiles place the camera near the stand-off viewpoint on the -z
//! axis looking at the origin (poses are world-from-camera). Knots are
//! sampled on a uniform grid at the knot rate, padded beyond the nominal
//! duration on both sides so that frame brackets, mid-exposure queries, and
//! small timestamp offsets stay inside the trajectory domain.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimulatorError;
use crate::geometry::{Pose, Trajectory};

pub const DEFAULT_KNOT_RATE_HZ: f64 = 1000.0;
/// Distance from the default viewpoint to the scene origin, meters.
pub const STAND_OFF_M: f64 = 2.5;
/// Length of one head-scan sweep segment, seconds.
const SEGMENT_S: f64 = 0.4;
/// Domain padding beyond `[0, duration]`, seconds.
const PAD_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionKind {
    /// Camera fixed at the stand-off viewpoint.
    Static,
    /// Constant-rate orbit around the origin at the stand-off radius,
    /// always facing the origin.
    Orbit { deg_per_s: f64 },
    /// Piecewise single-axis sweeps (yaw or pitch) about a fixed viewpoint,
    /// each ramping smoothly up to the configured peak rate and back, plus a
    /// sinusoidal lateral translation sweep. The first segment always sweeps
    /// yaw, so its midpoint rotates at the peak rate about the y axis.
    HeadScan { peak_deg_per_s: f64, translation_sweep_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub kind: MotionKind,
    /// Nominal capture duration, seconds; frames are scheduled within it.
    pub duration: f64,
    pub knot_rate_hz: f64,
    pub seed: u64,
}

/// One head-scan segment: axis (0 = yaw about y, 1 = pitch about x),
/// starting angle, and the signed sweep amplitude.
struct Sweep {
    axis: usize,
    start: [f64; 2],
    sign: f64,
}

impl MotionProfile {
    pub fn new(kind: MotionKind, duration: f64) -> Self {
        Self { kind, duration, knot_rate_hz: DEFAULT_KNOT_RATE_HZ, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |what: String| Err(SimulatorError::BadParams { what });
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("motion duration {} must be positive", self.duration));
        }
        if !(self.knot_rate_hz >= 10.0 && self.knot_rate_hz.is_finite()) {
            return bad(format!("knot rate {} Hz too low", self.knot_rate_hz));
        }
        match self.kind {
            MotionKind::Static => {}
            MotionKind::Orbit { deg_per_s } => {
                if !deg_per_s.is_finite() {
                    return bad(format!("orbit rate {deg_per_s} must be finite"));
                }
            }
            MotionKind::HeadScan { peak_deg_per_s, translation_sweep_m } => {
                if !(peak_deg_per_s > 0.0 && peak_deg_per_s.is_finite()) {
                    return bad(format!("head-scan peak rate {peak_deg_per_s} must be positive"));
                }
                if !(translation_sweep_m >= 0.0 && translation_sweep_m.is_finite()) {
                    return bad(format!("translation sweep {translation_sweep_m} must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Sample the closed-form motion at the knot rate.
    pub fn generate(&self) -> Result<Trajectory, SimulatorError> {
        self.validate()?;
        let dt = 1.0 / self.knot_rate_hz;
        let n = ((self.duration + 2.0 * PAD_S) * self.knot_rate_hz).round() as usize;
        let sweeps = match self.kind {
            MotionKind::HeadScan { peak_deg_per_s, .. } => {
                self.plan_sweeps(peak_deg_per_s.to_radians())
            }
            _ => Vec::new(),
        };
        let knots = (0..=n)
            .map(|i| {
                let t = -PAD_S + i as f64 * dt;
                (t, self.pose_at(t, &sweeps))
            })
            .collect();
        Ok(Trajectory::new(knots)?)
    }

    /// Sweep segments covering `[0, duration]`. Each sweeps its axis by
    /// `2A·sign` with angular speed `A·π/T·sin(π·τ)`, so the peak rate is
    /// `peak` at the segment midpoint and zero at the joins. The sign pulls
    /// the accumulated angle back toward zero to keep the scene in view.
    fn plan_sweeps(&self, peak_rad: f64) -> Vec<Sweep> {
        let amplitude = peak_rad * SEGMENT_S / std::f64::consts::PI;
        let n_seg = (self.duration / SEGMENT_S).ceil().max(1.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut angles = [0.0f64; 2];
        let mut sweeps = Vec::with_capacity(n_seg);
        for k in 0..n_seg {
            let axis = if k == 0 { 0 } else { rng.random_range(0..2usize) };
            let sign = if angles[axis] > amplitude * 0.5 {
                -1.0
            } else if angles[axis] < -amplitude * 0.5 {
                1.0
            } else if k == 0 {
                1.0
            } else if rng.random_range(0..2) == 0 {
                1.0
            } else {
                -1.0
            };
            sweeps.push(Sweep { axis, start: angles, sign });
            angles[axis] += 2.0 * amplitude * sign;
        }
        sweeps
    }

    fn pose_at(&self, t: f64, sweeps: &[Sweep]) -> Pose {
        let stand_off = Vector3::new(0.0, 0.0, -STAND_OFF_M);
        match self.kind {
            MotionKind::Static => Pose::new(UnitQuaternion::identity(), stand_off),
            MotionKind::Orbit { deg_per_s } => {
                let phi = deg_per_s.to_radians() * t;
                let center =
                    Vector3::new(STAND_OFF_M * phi.sin(), 0.0, -STAND_OFF_M * phi.cos());
                Pose::new(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -phi), center)
            }
            MotionKind::HeadScan { peak_deg_per_s, translation_sweep_m } => {
                let tc = t.clamp(0.0, self.duration);
                let amplitude = peak_deg_per_s.to_radians() * SEGMENT_S / std::f64::consts::PI;
                let k = ((tc / SEGMENT_S) as usize).min(sweeps.len() - 1);
                let sweep = &sweeps[k];
                let tau = ((tc - k as f64 * SEGMENT_S) / SEGMENT_S).clamp(0.0, 1.0);
                let mut angles = sweep.start;
                angles[sweep.axis] +=
                    sweep.sign * amplitude * (1.0 - (std::f64::consts::PI * tau).cos());
                let rotation = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angles[0])
                    * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angles[1]);
                let sway = translation_sweep_m
                    * (2.0 * std::f64::consts::PI * tc / self.duration).sin();
                Pose::new(rotation, stand_off + Vector3::new(sway, 0.0, 0.0))
            }
        }
    }
}
