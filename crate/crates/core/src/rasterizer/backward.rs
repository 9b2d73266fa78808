//! Analytic gradients of the forward compositing.
//!
//! Per pixel, a front-to-back replay records each contribution, then a
//! back-to-front sweep with a suffix accumulator yields ∂C/∂α′ exactly.
//! Per-gaussian screen-space gradients (mean, precision) are then chained
//! through the projection: 2D precision → dilated 2D covariance → camera
//! covariance → world covariance → (log-scales, quaternion), and projected
//! mean → camera mean → world mean, including the dependence of the
//! projection Jacobian itself on the camera-space mean.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use super::{clamped_color, PreparedRaster, RasterizeError, ALPHA_SKIP, TERMINATION_TRANSMITTANCE};
use crate::image_buf::ImageRgb;
use crate::scene::GaussianScene;

/// Per-gaussian partials of a scalar loss with respect to every scene
/// parameter. Quaternion gradients are in coordinate order (x, y, z, w) and
/// projected onto the unit-sphere tangent at the current rotation.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    pub means: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacities_raw: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    pub radiance_scale: f64,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            opacities_raw: vec![0.0; n],
            colors: vec![Vector3::zeros(); n],
            radiance_scale: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn is_all_zero(&self) -> bool {
        self.radiance_scale == 0.0
            && self.means.iter().all(|v| *v == Vector3::zeros())
            && self.rotations.iter().all(|v| *v == Vector4::zeros())
            && self.log_scales.iter().all(|v| *v == Vector3::zeros())
            && self.opacities_raw.iter().all(|v| *v == 0.0)
            && self.colors.iter().all(|v| *v == Vector3::zeros())
    }

    pub fn check_finite(&self) -> bool {
        self.radiance_scale.is_finite()
            && self.means.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacities_raw.iter().all(|v| v.is_finite())
            && self.colors.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Partials of the rotation matrix w.r.t. unit-quaternion coordinates
/// (x, y, z, w), Hamilton convention.
fn rotation_matrix_partials(q: Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (x, y, z, w) = (q.x, q.y, q.z, q.w);
    [
        Matrix3::new(
            0.0, 2.0 * y, 2.0 * z,
            2.0 * y, -4.0 * x, -2.0 * w,
            2.0 * z, 2.0 * w, -4.0 * x,
        ),
        Matrix3::new(
            -4.0 * y, 2.0 * x, 2.0 * w,
            2.0 * x, 0.0, 2.0 * z,
            -2.0 * w, 2.0 * z, -4.0 * y,
        ),
        Matrix3::new(
            -4.0 * z, -2.0 * w, 2.0 * x,
            2.0 * w, -4.0 * z, 2.0 * y,
            2.0 * x, 2.0 * y, 0.0,
        ),
        Matrix3::new(
            0.0, -2.0 * z, 2.0 * y,
            2.0 * z, 0.0, -2.0 * x,
            -2.0 * y, 2.0 * x, 0.0,
        ),
    ]
}

#[inline]
fn frobenius_dot(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.component_mul(b).sum()
}

struct Replay {
    slot: u32,
    alpha_prime: f64,
    gauss_val: f64,
    t_prev: f64,
    d: Vector2<f64>,
}

impl PreparedRaster {
    /// Accumulate gradients of `sum(upstream ⊙ rendered color)` into
    /// `grads`. Pixels outside the mask contribute nothing.
    pub fn backward_into(
        &self,
        scene: &GaussianScene,
        background: Vector3<f64>,
        upstream: &ImageRgb,
        grads: &mut GradientBuffer,
    ) -> Result<(), RasterizeError> {
        if upstream.width != self.width || upstream.height != self.height {
            return Err(RasterizeError::SizeMismatch {
                what: "upstream gradient image",
                got_w: upstream.width,
                got_h: upstream.height,
                want_w: self.width,
                want_h: self.height,
            });
        }
        if grads.len() != scene.len() {
            return Err(RasterizeError::GradientShapeMismatch {
                got: grads.len(),
                want: scene.len(),
            });
        }

        let n = self.gaussians.len();
        let mut d_color = vec![Vector3::<f64>::zeros(); n];
        let mut d_pre = vec![0.0f64; n];
        let mut d_mean2d = vec![Vector2::<f64>::zeros(); n];
        let mut d_prec = vec![Matrix2::<f64>::zeros(); n];
        let mut scratch: Vec<Replay> = Vec::new();

        for py in 0..self.height {
            for px in 0..self.width {
                let idx = py * self.width + px;
                if !self.pixel_enabled(idx) {
                    continue;
                }
                let up = Vector3::from(upstream.get(px, py));
                if up == Vector3::zeros() {
                    continue;
                }
                let slice =
                    &self.entries[self.offsets[idx] as usize..self.offsets[idx + 1] as usize];
                if slice.is_empty() {
                    continue;
                }
                let (pxf, pyf) = (px as f64, py as f64);
                scratch.clear();
                let mut t = 1.0;
                for &slot in slice {
                    let g = &self.gaussians[slot as usize];
                    let d = Vector2::new(pxf - g.mean2d.x, pyf - g.mean2d.y);
                    let gv = (-0.5 * d.dot(&(g.prec * d))).exp();
                    let a = g.alpha * gv;
                    if a < ALPHA_SKIP {
                        continue;
                    }
                    scratch.push(Replay { slot, alpha_prime: a, gauss_val: gv, t_prev: t, d });
                    t *= 1.0 - a;
                    if t < TERMINATION_TRANSMITTANCE {
                        break;
                    }
                }
                // Back-to-front: `suffix` holds the composited contribution
                // of everything behind the current gaussian (incl. background).
                let mut suffix = t * background;
                for r in scratch.iter().rev() {
                    let g = &self.gaussians[r.slot as usize];
                    let i = g.index as usize;
                    let stored = scene.colors[i];
                    let c_used = clamped_color(&stored);
                    let weight = r.t_prev * r.alpha_prime;
                    let one_minus = (1.0 - r.alpha_prime).max(f64::MIN_POSITIVE);
                    let dc_dalpha = r.t_prev * c_used - suffix / one_minus;
                    let dl_dalpha = up.dot(&dc_dalpha);

                    let slot = r.slot as usize;
                    let mut dc = up * weight;
                    for ch in 0..3 {
                        if stored[ch] <= 0.0 {
                            dc[ch] = 0.0;
                        }
                    }
                    d_color[slot] += dc;
                    d_pre[slot] += dl_dalpha * r.gauss_val * g.alpha * (1.0 - g.alpha);
                    let dl_dg = dl_dalpha * g.alpha;
                    let lam_d = g.prec * r.d;
                    d_mean2d[slot] += (dl_dg * r.gauss_val) * lam_d;
                    d_prec[slot] += (-0.5 * dl_dg * r.gauss_val) * (r.d * r.d.transpose());
                    suffix += weight * c_used;
                }
            }
        }

        // Chain screen-space gradients back to scene parameters.
        for (slot, g) in self.gaussians.iter().enumerate() {
            let i = g.index as usize;
            let lam = g.prec;
            let d_cov2 = -(lam * d_prec[slot] * lam);
            let d_cov_cam = g.jac.transpose() * d_cov2 * g.jac;
            let d_jac = 2.0 * d_cov2 * g.jac * g.cov_cam;
            let d_cov_w = self.w2c.transpose() * d_cov_cam * self.w2c;

            let r_mat = scene.rotations[i].to_rotation_matrix().into_inner();
            let eig = scene.log_scales[i].map(|l| (2.0 * l).exp());
            let d_in_local = r_mat.transpose() * d_cov_w * r_mat;
            let d_logs = Vector3::new(
                d_in_local[(0, 0)] * 2.0 * eig.x,
                d_in_local[(1, 1)] * 2.0 * eig.y,
                d_in_local[(2, 2)] * 2.0 * eig.z,
            );
            let d_rot_mat = 2.0 * d_cov_w * r_mat * Matrix3::from_diagonal(&eig);
            let q = scene.rotations[i].coords;
            let parts = rotation_matrix_partials(Vector4::new(q.x, q.y, q.z, q.w));
            let dq_raw = Vector4::new(
                frobenius_dot(&d_rot_mat, &parts[0]),
                frobenius_dot(&d_rot_mat, &parts[1]),
                frobenius_dot(&d_rot_mat, &parts[2]),
                frobenius_dot(&d_rot_mat, &parts[3]),
            );
            let q_vec = Vector4::new(q.x, q.y, q.z, q.w);
            let dq = dq_raw - q_vec * dq_raw.dot(&q_vec);

            // Projected-mean path plus the Jacobian's own dependence on the
            // camera-space mean.
            let mut d_mean_cam = g.jac.transpose() * d_mean2d[slot];
            let f = self.focal;
            let (x, y, z) = (g.mean_cam.x, g.mean_cam.y, g.mean_cam.z);
            let dfz2 = -f / (z * z);
            d_mean_cam.x += d_jac[(0, 2)] * dfz2;
            d_mean_cam.y += d_jac[(1, 2)] * dfz2;
            d_mean_cam.z += (d_jac[(0, 0)] + d_jac[(1, 1)]) * dfz2
                + d_jac[(0, 2)] * (2.0 * f * x / (z * z * z))
                + d_jac[(1, 2)] * (2.0 * f * y / (z * z * z));

            grads.means[i] += self.w2c.transpose() * d_mean_cam;
            grads.rotations[i] += dq;
            grads.log_scales[i] += d_logs;
            grads.opacities_raw[i] += d_pre[slot];
            grads.colors[i] += d_color[slot];
        }
        Ok(())
    }
}
