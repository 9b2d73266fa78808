//! double-precision image buffers shared by the renderer, simulator, and metrics.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("image at {path} has size {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeMismatch {
        path: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Interleaved-RGB image with `f64` channels, row-major.
///
/// Value range depends on context: formed images live in `[0,1]` response
/// space, rasterizer composites are unclamped gamma-space radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    /// `3 * width * height` values, pixel-major (`[r g b, r g b, ...]`).
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        3 * (y * self.width + x)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Mean of all channel values (no mask).
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at fractional pixel coordinates (integer coordinates
    /// are sample centers). Caller guarantees `0 <= x <= width-1` etc.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let (x0, y0, fx, fy) = bilinear_setup(x, y, self.width, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let v00 = self.data[self.idx(x0, y0) + c];
            let v10 = self.data[self.idx(x1, y0) + c];
            let v01 = self.data[self.idx(x0, y1) + c];
            let v11 = self.data[self.idx(x1, y1) + c];
            *o = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
        }
        out
    }

    /// Encode to 8-bit sRGB-range PNG (values clamped to `[0,1]`).
    pub fn save_png8(&self, path: &Path) -> Result<(), ImageIoError> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.get(x, y);
                buf.put_pixel(x as u32, y as u32, image::Rgb(p.map(quant8)));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png8(path: &Path) -> Result<Self, ImageIoError> {
        let buf = image::open(path)?.to_rgb8();
        let (w, h) = (buf.width() as usize, buf.height() as usize);
        let mut img = Self::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let p = buf.get_pixel(x as u32, y as u32).0;
                img.set(x, y, p.map(|v| v as f64 / 255.0));
            }
        }
        Ok(img)
    }
}

/// Single-channel `f64` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMono {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageMono {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let (x0, y0, fx, fy) = bilinear_setup(x, y, self.width, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.data[self.idx(x0, y0)];
        let v10 = self.data[self.idx(x1, y0)];
        let v01 = self.data[self.idx(x0, y1)];
        let v11 = self.data[self.idx(x1, y1)];
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
    }

    /// 16-bit grayscale PNG (values clamped to `[0,1]`); used for vignette
    /// files where 8 bits would quantize the weight visibly.
    pub fn save_png16(&self, path: &Path) -> Result<(), ImageIoError> {
        let mut buf =
            image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = (self.get(x, y).clamp(0.0, 1.0) * 65535.0).round() as u16;
                buf.put_pixel(x as u32, y as u32, image::Luma([v]));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png16(path: &Path) -> Result<Self, ImageIoError> {
        let buf = image::open(path)?.to_luma16();
        let (w, h) = (buf.width() as usize, buf.height() as usize);
        let mut img = Self::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, buf.get_pixel(x as u32, y as u32).0[0] as f64 / 65535.0);
            }
        }
        Ok(img)
    }
}

#[inline]
fn quant8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
fn bilinear_setup(x: f64, y: f64, width: usize, height: usize) -> (usize, usize, f64, f64) {
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    (x0.min(width - 1), y0.min(height - 1), xc - x0 as f64, yc - y0 as f64)
}
