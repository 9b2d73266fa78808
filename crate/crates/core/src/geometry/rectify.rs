//! Rectification remap tables and the rolling-shutter index-ratio lookup.

use nalgebra::Vector3;

use super::{CameraModel, GeometryError, Pose};
use crate::image_buf::{ImageMono, ImageRgb};

/// Per-rectified-pixel source-row fraction R(u) used to evaluate the
/// rolling-shutter time of a rectified pixel (`pixel_time(meta, R(u))`).
/// Stored at full precision; the 8-bit 1..255 encoding is only an
/// interchange format.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRatioImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl IndexRatioImage {
    /// Ratio image of an identity rectification: row `v` maps to `v / H`
    /// (or `(H-1-v) / H` when the sensor reads rows bottom-to-top).
    pub fn identity(width: usize, height: usize, readout_reversed: bool) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for v in 0..height {
            let ratio = row_ratio(v as f64, height, readout_reversed);
            values.extend(std::iter::repeat(ratio).take(width));
        }
        Self { width, height, values, valid: vec![true; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    /// Encode to the 8-bit interchange format: 0 = invalid, k ∈ [1,255]
    /// encodes ratio (k-1)/254 (1 is the first row, 255 the last).
    pub fn encode8(&self) -> image::GrayImage {
        let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let k = if self.valid[i] {
                    1 + (self.values[i].clamp(0.0, 1.0) * 254.0).round() as u8
                } else {
                    0
                };
                img.put_pixel(x as u32, y as u32, image::Luma([k]));
            }
        }
        img
    }

    pub fn decode8(img: &image::GrayImage) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let mut values = vec![0.0; width * height];
        let mut valid = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                let k = img.get_pixel(x as u32, y as u32).0[0];
                let i = y * width + x;
                if k > 0 {
                    values[i] = (k - 1) as f64 / 254.0;
                    valid[i] = true;
                }
            }
        }
        Self { width, height, values, valid }
    }
}

#[inline]
fn row_ratio(src_row: f64, src_height: usize, readout_reversed: bool) -> f64 {
    if readout_reversed {
        (src_height as f64 - 1.0 - src_row) / src_height as f64
    } else {
        src_row / src_height as f64
    }
}

/// Rectification built by `build_rectification`: a per-destination-pixel
/// fractional source coordinate, the index-ratio image, and a validity mask
/// marking destination pixels whose ray leaves the source image.
#[derive(Debug, Clone)]
pub struct Rectification {
    pub width: usize,
    pub height: usize,
    pub src_width: usize,
    pub src_height: usize,
    /// Fractional source coordinates per destination pixel; NaN when invalid.
    pub remap: Vec<(f64, f64)>,
    pub valid: Vec<bool>,
    pub ratio: IndexRatioImage,
}

/// Build the per-pixel remap table from a source camera to a distortion-free
/// destination camera, with a rotation-only extrinsic alignment applied to
/// destination rays (`ray_src = alignment.rotation * ray_dst`).
///
/// Destination pixels whose source coordinate falls outside the
/// bilinear-safe region `[0, W-1] x [0, H-1]` are flagged invalid — a
/// destination field of view exceeding source coverage just grows the
/// invalid region.
pub fn build_rectification(
    src: &CameraModel,
    dst: &CameraModel,
    alignment: &Pose,
    readout_reversed: bool,
) -> Result<Rectification, GeometryError> {
    if !dst.is_distortion_free() {
        return Err(GeometryError::DistortedRectificationTarget { n: dst.distortion.len() });
    }
    let t_norm = alignment.translation.norm();
    if t_norm > 1e-9 {
        return Err(GeometryError::TranslationalAlignment { norm: t_norm });
    }
    let (w, h) = (dst.width, dst.height);
    let n = w * h;
    let mut remap = vec![(f64::NAN, f64::NAN); n];
    let mut valid = vec![false; n];
    let mut ratio_values = vec![0.0; n];
    let mut ratio_valid = vec![false; n];
    let identity_alignment = alignment.rotation == nalgebra::UnitQuaternion::identity();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ray_dst = dst.unproject(x as f64, y as f64);
            let ray_src: Vector3<f64> =
                if identity_alignment { ray_dst } else { alignment.rotation * ray_dst };
            if let Some((u, v)) = src.project(&ray_src) {
                let in_sample_region = u >= 0.0
                    && u <= (src.width - 1) as f64
                    && v >= 0.0
                    && v <= (src.height - 1) as f64;
                if in_sample_region {
                    remap[i] = (u, v);
                    valid[i] = true;
                    ratio_values[i] = row_ratio(v, src.height, readout_reversed);
                    ratio_valid[i] = true;
                }
            }
        }
    }
    Ok(Rectification {
        width: w,
        height: h,
        src_width: src.width,
        src_height: src.height,
        remap,
        valid,
        ratio: IndexRatioImage { width: w, height: h, values: ratio_values, valid: ratio_valid },
    })
}

impl Rectification {
    fn check_src_size(&self, w: usize, h: usize) -> Result<(), GeometryError> {
        if (w, h) != (self.src_width, self.src_height) {
            return Err(GeometryError::ResolutionMismatch {
                got_w: w,
                got_h: h,
                want_w: self.src_width,
                want_h: self.src_height,
            });
        }
        Ok(())
    }

    /// Bilinear-resample a source image into the rectified frame; invalid
    /// destination pixels are set to zero.
    pub fn remap_rgb(&self, src: &ImageRgb) -> Result<ImageRgb, GeometryError> {
        self.check_src_size(src.width, src.height)?;
        let mut out = ImageRgb::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                if self.valid[i] {
                    let (u, v) = self.remap[i];
                    out.set(x, y, src.sample_bilinear(u, v));
                }
            }
        }
        Ok(out)
    }

    pub fn remap_mono(&self, src: &ImageMono) -> Result<ImageMono, GeometryError> {
        self.check_src_size(src.width, src.height)?;
        let mut out = ImageMono::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                if self.valid[i] {
                    let (u, v) = self.remap[i];
                    out.set(x, y, src.sample_bilinear(u, v));
                }
            }
        }
        Ok(out)
    }
}
