//! Masked structural similarity with a Gaussian window, plus the exact
//! adjoint of its mean — the structural term of the photometric loss.
//!
//! Local statistics are weighted means over the window, renormalized over the
//! valid pixels each window actually covers, so excluded pixels can never
//! influence the score. All convolutions are separable and zero-padded; the
//! renormalization emerges from dividing by the convolved mask.

use super::MetricsError;
use crate::image_buf::ImageRgb;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Stabilizers for a dynamic range of 1.0.
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

fn window_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - half) * (i as f64 - half)) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Horizontal zero-padded convolution with an 11-tap kernel.
fn conv_rows(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW], dst: &mut [f64]) {
    let half = WINDOW / 2;
    let lo = half.min(w);
    let hi = w.saturating_sub(half).max(lo);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut dst[y * w..(y + 1) * w];
        for x in lo..hi {
            let base = x - half;
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * row[base + i];
            }
            out[x] = acc;
        }
        for x in (0..lo).chain(hi..w) {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - half as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * row[xx as usize];
                }
            }
            out[x] = acc;
        }
    }
}

/// Vertical zero-padded convolution, streamed row-wise for cache locality.
fn conv_cols(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW], dst: &mut [f64]) {
    let half = WINDOW / 2;
    dst.fill(0.0);
    for y in 0..h {
        let out = &mut dst[y * w..(y + 1) * w];
        for (i, &kv) in k.iter().enumerate() {
            let yy = y as isize + i as isize - half as isize;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let row = &src[yy as usize * w..(yy as usize + 1) * w];
            for (o, &s) in out.iter_mut().zip(row) {
                *o += kv * s;
            }
        }
    }
}

fn conv2(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW], tmp: &mut [f64], dst: &mut [f64]) {
    conv_rows(src, w, h, k, tmp);
    conv_cols(tmp, w, h, k, dst);
}

/// Mask plus reference-side window statistics, precomputed once so repeated
/// evaluations against the same captured frame skip half the convolutions.
pub struct SsimReference {
    width: usize,
    height: usize,
    kernel: [f64; WINDOW],
    mask: Vec<bool>,
    valid_count: usize,
    /// 1 / conv2(mask) at valid centers, 0 elsewhere.
    inv_cm: Vec<f64>,
    /// Reference channels zeroed at excluded pixels.
    ref_planes: [Vec<f64>; 3],
    mu_b: [Vec<f64>; 3],
    m_bb: [Vec<f64>; 3],
}

impl SsimReference {
    pub fn new(reference: &ImageRgb, mask: &[bool]) -> Result<Self, MetricsError> {
        let (w, h) = (reference.width, reference.height);
        let n = w * h;
        if mask.len() != n {
            return Err(MetricsError::MaskLengthMismatch { got: mask.len(), want: n });
        }
        let valid_count = mask.iter().filter(|&&m| m).count();
        if valid_count == 0 {
            return Err(MetricsError::EmptyMask);
        }
        let kernel = window_kernel();
        let mask_field: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let mut tmp = vec![0.0; n];
        let mut cm = vec![0.0; n];
        conv2(&mask_field, w, h, &kernel, &mut tmp, &mut cm);
        // A valid center always covers itself, so conv2(mask) > 0 there.
        let inv_cm: Vec<f64> =
            cm.iter().zip(mask).map(|(&c, &m)| if m { 1.0 / c } else { 0.0 }).collect();

        let mut ref_planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut mu_b = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut m_bb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut field = vec![0.0; n];
        let mut conv = vec![0.0; n];
        for c in 0..3 {
            for p in 0..n {
                ref_planes[c][p] = if mask[p] { reference.data[3 * p + c] } else { 0.0 };
            }
            conv2(&ref_planes[c], w, h, &kernel, &mut tmp, &mut conv);
            for p in 0..n {
                mu_b[c][p] = conv[p] * inv_cm[p];
            }
            for p in 0..n {
                field[p] = ref_planes[c][p] * ref_planes[c][p];
            }
            conv2(&field, w, h, &kernel, &mut tmp, &mut conv);
            for p in 0..n {
                m_bb[c][p] = conv[p] * inv_cm[p];
            }
        }
        Ok(Self { width: w, height: h, kernel, mask: mask.to_vec(), valid_count, inv_cm, ref_planes, mu_b, m_bb })
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Mean SSIM of `a` against the stored reference over the valid mask.
    pub fn evaluate(&self, a: &ImageRgb) -> Result<f64, MetricsError> {
        self.run(a, false).map(|(s, _)| s)
    }

    /// Mean SSIM plus its gradient with respect to every entry of `a.data`
    /// (interleaved RGB layout, zero at excluded pixels).
    pub fn evaluate_with_gradient(&self, a: &ImageRgb) -> Result<(f64, Vec<f64>), MetricsError> {
        self.run(a, true).map(|(s, g)| (s, g.expect("gradient requested")))
    }

    fn run(&self, a: &ImageRgb, want_grad: bool) -> Result<(f64, Option<Vec<f64>>), MetricsError> {
        if a.width != self.width || a.height != self.height {
            return Err(MetricsError::SizeMismatch {
                got_w: a.width,
                got_h: a.height,
                want_w: self.width,
                want_h: self.height,
            });
        }
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let k = &self.kernel;
        let mut tmp = vec![0.0; n];
        let mut am = vec![0.0; n];
        let mut field = vec![0.0; n];
        let mut ca = vec![0.0; n];
        let mut caa = vec![0.0; n];
        let mut cab = vec![0.0; n];
        let mut g_mu = vec![0.0; n];
        let mut g_maa = vec![0.0; n];
        let mut g_mab = vec![0.0; n];
        let mut scat = vec![0.0; n];
        let mut grad = if want_grad { Some(vec![0.0; 3 * n]) } else { None };
        let samples = (3 * self.valid_count) as f64;
        let upstream = 1.0 / samples;
        let mut total = 0.0;

        for c in 0..3 {
            let bm = &self.ref_planes[c];
            for p in 0..n {
                am[p] = if self.mask[p] { a.data[3 * p + c] } else { 0.0 };
            }
            conv2(&am, w, h, k, &mut tmp, &mut ca);
            for p in 0..n {
                field[p] = am[p] * am[p];
            }
            conv2(&field, w, h, k, &mut tmp, &mut caa);
            for p in 0..n {
                field[p] = am[p] * bm[p];
            }
            conv2(&field, w, h, k, &mut tmp, &mut cab);

            for p in 0..n {
                if !self.mask[p] {
                    if want_grad {
                        g_mu[p] = 0.0;
                        g_maa[p] = 0.0;
                        g_mab[p] = 0.0;
                    }
                    continue;
                }
                let inv = self.inv_cm[p];
                let mu_a = ca[p] * inv;
                let mu_b = self.mu_b[c][p];
                let maa = caa[p] * inv;
                let mab = cab[p] * inv;
                let mbb = self.m_bb[c][p];
                let a1 = 2.0 * mu_a * mu_b + C1;
                let a2 = 2.0 * (mab - mu_a * mu_b) + C2;
                let b1 = mu_a * mu_a + mu_b * mu_b + C1;
                let b2 = (maa - mu_a * mu_a) + (mbb - mu_b * mu_b) + C2;
                let s = (a1 * a2) / (b1 * b2);
                total += s;
                if want_grad {
                    let denom = b1 * b2;
                    let ds_da1 = a2 / denom;
                    let ds_da2 = a1 / denom;
                    let ds_db1 = -s / b1;
                    let ds_db2 = -s / b2;
                    let scale = inv * upstream;
                    g_mu[p] =
                        (2.0 * mu_b * (ds_da1 - ds_da2) + 2.0 * mu_a * (ds_db1 - ds_db2)) * scale;
                    g_maa[p] = ds_db2 * scale;
                    g_mab[p] = 2.0 * ds_da2 * scale;
                }
            }

            if let Some(grad) = grad.as_mut() {
                conv2(&g_mu, w, h, k, &mut tmp, &mut scat);
                for p in 0..n {
                    if self.mask[p] {
                        grad[3 * p + c] = scat[p];
                    }
                }
                conv2(&g_maa, w, h, k, &mut tmp, &mut scat);
                for p in 0..n {
                    if self.mask[p] {
                        grad[3 * p + c] += 2.0 * am[p] * scat[p];
                    }
                }
                conv2(&g_mab, w, h, k, &mut tmp, &mut scat);
                for p in 0..n {
                    if self.mask[p] {
                        grad[3 * p + c] += bm[p] * scat[p];
                    }
                }
            }
        }
        Ok((total / samples, grad))
    }
}

/// Mean SSIM of `a` vs `b` over the masked pixels, channels averaged.
pub fn ssim(a: &ImageRgb, b: &ImageRgb, mask: &[bool]) -> Result<f64, MetricsError> {
    super::check_pair(a, b, mask)?;
    SsimReference::new(b, mask)?.evaluate(a)
}

/// [`ssim`] plus its gradient with respect to `a` (interleaved RGB layout).
pub fn ssim_with_gradient(
    a: &ImageRgb,
    b: &ImageRgb,
    mask: &[bool],
) -> Result<(f64, Vec<f64>), MetricsError> {
    super::check_pair(a, b, mask)?;
    SsimReference::new(b, mask)?.evaluate_with_gradient(a)
}
