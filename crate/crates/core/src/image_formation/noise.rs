//! Photon shot noise in linear radiance, parameterized the way a sensor
//! sees it: photon counts are Poisson in the *linear* signal divided by
//! gain, so higher gain means fewer photons and proportionally more noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::FormedImage;
use crate::scene::{compress_radiance, decompress_radiance};

/// Replace each valid pixel value v with
/// `compress(Poisson(decompress(v) · ppu / gain) · gain / ppu)`, clamped to
/// [0,1]. Deterministic for a fixed seed; invalid pixels pass through.
pub fn apply_shot_noise(
    img: &FormedImage,
    gamma: f64,
    gain: f64,
    photons_per_unit: f64,
    seed: u64,
) -> FormedImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for i in 0..img.valid.len() {
        if !img.valid[i] {
            continue;
        }
        for ch in 0..3 {
            let v = img.pixels.data[3 * i + ch].clamp(0.0, 1.0);
            let lin = decompress_radiance(v, gamma);
            let mean_photons = lin * photons_per_unit / gain;
            let count = if mean_photons > 0.0 {
                Poisson::new(mean_photons).expect("finite positive mean").sample(&mut rng)
            } else {
                0.0
            };
            let noisy = count * gain / photons_per_unit;
            out.pixels.data[3 * i + ch] = compress_radiance(noisy, gamma).clamp(0.0, 1.0);
        }
    }
    out
}
