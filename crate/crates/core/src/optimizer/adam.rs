//! Adaptive moment updates with per-group learning rates and the
//! exponentially decaying position schedule.

use super::OptimizerError;
use crate::rasterizer::GradientBuffer;
use crate::scene::GaussianScene;
use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

/// Base position rate, scaled by scene extent and decayed exponentially.
pub const LR_MEANS_INIT: f64 = 1.6e-4;
pub const LR_MEANS_FINAL: f64 = 1.6e-6;
pub const LR_COLORS: f64 = 2.5e-3;
pub const LR_OPACITIES: f64 = 5e-2;
pub const LR_LOG_SCALES: f64 = 5e-3;
pub const LR_ROTATIONS: f64 = 1e-3;

/// Position learning rate after `iter` of `total` iterations: exponential
/// interpolation from `LR_MEANS_INIT·extent` down to `LR_MEANS_FINAL·extent`.
pub fn position_lr(iter: u64, total: u64, extent: f64) -> f64 {
    let t = if total == 0 { 1.0 } else { (iter as f64 / total as f64).clamp(0.0, 1.0) };
    LR_MEANS_INIT * extent * (LR_MEANS_FINAL / LR_MEANS_INIT).powf(t)
}

/// Per-group step sizes for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub means: f64,
    pub rotations: f64,
    pub log_scales: f64,
    pub opacities: f64,
    pub colors: f64,
}

impl GroupRates {
    /// Convention rates, with the scheduled position rate supplied.
    pub fn standard(position_rate: f64) -> Self {
        Self {
            means: position_rate,
            rotations: LR_ROTATIONS,
            log_scales: LR_LOG_SCALES,
            opacities: LR_OPACITIES,
            colors: LR_COLORS,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            means: self.means * factor,
            rotations: self.rotations * factor,
            log_scales: self.log_scales * factor,
            opacities: self.opacities * factor,
            colors: self.colors * factor,
        }
    }
}

/// First and second moment estimates for every scene parameter. Rotations
/// are treated as raw 4-vectors and renormalized after each step.
pub struct Adam {
    t: u64,
    m_means: Vec<Vector3<f64>>,
    v_means: Vec<Vector3<f64>>,
    m_rotations: Vec<Vector4<f64>>,
    v_rotations: Vec<Vector4<f64>>,
    m_log_scales: Vec<Vector3<f64>>,
    v_log_scales: Vec<Vector3<f64>>,
    m_opacities: Vec<f64>,
    v_opacities: Vec<f64>,
    m_colors: Vec<Vector3<f64>>,
    v_colors: Vec<Vector3<f64>>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            m_means: vec![Vector3::zeros(); n],
            v_means: vec![Vector3::zeros(); n],
            m_rotations: vec![Vector4::zeros(); n],
            v_rotations: vec![Vector4::zeros(); n],
            m_log_scales: vec![Vector3::zeros(); n],
            v_log_scales: vec![Vector3::zeros(); n],
            m_opacities: vec![0.0; n],
            v_opacities: vec![0.0; n],
            m_colors: vec![Vector3::zeros(); n],
            v_colors: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.m_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_means.is_empty()
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One descent step. Zero gradients leave parameters bit-identical.
    pub fn step(
        &mut self,
        scene: &mut GaussianScene,
        grads: &GradientBuffer,
        rates: &GroupRates,
    ) -> Result<(), OptimizerError> {
        let n = self.len();
        if scene.len() != n || grads.len() != n {
            return Err(OptimizerError::LengthMismatch {
                scene: scene.len(),
                grads: grads.len(),
                state: n,
            });
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - BETA2.powi(self.t.min(i32::MAX as u64) as i32);
        let delta = |m: &mut f64, v: &mut f64, g: f64, lr: f64| -> f64 {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            -lr * (*m / c1) / ((*v / c2).sqrt() + EPS)
        };

        for i in 0..n {
            for k in 0..3 {
                scene.means[i][k] += delta(
                    &mut self.m_means[i][k],
                    &mut self.v_means[i][k],
                    grads.means[i][k],
                    rates.means,
                );
                scene.log_scales[i][k] += delta(
                    &mut self.m_log_scales[i][k],
                    &mut self.v_log_scales[i][k],
                    grads.log_scales[i][k],
                    rates.log_scales,
                );
                scene.colors[i][k] += delta(
                    &mut self.m_colors[i][k],
                    &mut self.v_colors[i][k],
                    grads.colors[i][k],
                    rates.colors,
                );
            }
            scene.opacities_raw[i] += delta(
                &mut self.m_opacities[i],
                &mut self.v_opacities[i],
                grads.opacities_raw[i],
                rates.opacities,
            );
            let mut coords: Vector4<f64> = scene.rotations[i].coords;
            let mut moved = false;
            for k in 0..4 {
                let d = delta(
                    &mut self.m_rotations[i][k],
                    &mut self.v_rotations[i][k],
                    grads.rotations[i][k],
                    rates.rotations,
                );
                if d != 0.0 {
                    coords[k] += d;
                    moved = true;
                }
            }
            if moved {
                scene.rotations[i] = UnitQuaternion::new_normalize(Quaternion::new(
                    coords.w, coords.x, coords.y, coords.z,
                ));
            }
        }
        Ok(())
    }
}
