//! Photometric training loss over the valid mask:
//! `(1−λ)·L1 + λ·(1−SSIM)`, evaluated in response space, with exact
//! per-pixel gradients with respect to the rendered image.

use super::OptimizerError;
use crate::image_buf::ImageRgb;
use crate::metrics::SsimReference;

/// Loss value, its components, and `d total / d rendered.data`
/// (interleaved RGB, zero at excluded pixels).
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
    pub grad: Vec<f64>,
}

/// One-shot variant building the SSIM reference internally.
pub fn photometric_loss(
    rendered: &ImageRgb,
    captured: &ImageRgb,
    mask: &[bool],
    lambda: f64,
) -> Result<LossValue, OptimizerError> {
    let ssim_ref = SsimReference::new(captured, mask)?;
    photometric_loss_prepared(rendered, captured, &ssim_ref, lambda)
}

/// Loss against a captured frame whose SSIM-side statistics were prepared
/// once (the training loop reuses them across iterations).
pub fn photometric_loss_prepared(
    rendered: &ImageRgb,
    captured: &ImageRgb,
    ssim_ref: &SsimReference,
    lambda: f64,
) -> Result<LossValue, OptimizerError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(OptimizerError::BadConfig {
            reason: format!("loss mix lambda {lambda} outside [0, 1]"),
        });
    }
    if rendered.width != captured.width || rendered.height != captured.height {
        return Err(OptimizerError::BadTrainingSet {
            reason: format!(
                "rendered {}x{} vs captured {}x{}",
                rendered.width, rendered.height, captured.width, captured.height
            ),
        });
    }
    let mask = ssim_ref.mask();
    let samples = (3 * ssim_ref.valid_count()) as f64;
    let l1_weight = (1.0 - lambda) / samples;

    let (ssim, ssim_grad) = ssim_ref.evaluate_with_gradient(rendered)?;
    let mut grad = ssim_grad;
    let mut l1_sum = 0.0;
    for (p, &keep) in mask.iter().enumerate() {
        for c in 0..3 {
            let i = 3 * p + c;
            if keep {
                let d = rendered.data[i] - captured.data[i];
                l1_sum += d.abs();
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[i] = l1_weight * sign - lambda * grad[i];
            } else {
                grad[i] = 0.0;
            }
        }
    }
    let l1 = l1_sum / samples;
    Ok(LossValue { total: (1.0 - lambda) * l1 + lambda * (1.0 - ssim), l1, ssim, grad })
}
