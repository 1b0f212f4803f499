//! Seeded synthetic underwater-style pairs: smooth clean scenes degraded by a
//! known color cast and contrast compression.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Per-channel degradation `y = gain · (contrast · x + (1 - contrast) · 0.5) + haze`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub gain: [f64; 3],
    pub haze: [f64; 3],
    pub contrast: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        // Red attenuated most, a blue-green veil on top.
        Degradation {
            gain: [0.45, 0.8, 0.9],
            haze: [0.0, 0.08, 0.1],
            contrast: 0.5,
        }
    }
}

impl Degradation {
    pub fn apply(&self, clean: &Tensor) -> Tensor {
        let plane = clean.dims()[1] * clean.dims()[2];
        let mut out = clean.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i / plane;
            let y = self.gain[c] * (self.contrast * *v + (1.0 - self.contrast) * 0.5) + self.haze[c];
            *v = y.clamp(0.0, 1.0);
        }
        out
    }
}

/// A smooth clean scene: random gaussian blobs over a tilted plane plus a
/// low-amplitude texture, each channel rescaled to `[0.05, 0.95]`.
pub fn clean_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(3 * h * w);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..5)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.3),
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
            )
        })
        .collect();
    let tilt: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
        .collect();
    let freq = rng.random_range(6.0..14.0);
    for (c, &(tx, ty)) in tilt.iter().enumerate() {
        let mut plane = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                let mut s = tx * u + ty * v;
                for &(bx, by, r, amp) in &blobs {
                    let d2 = (u - bx).powi(2) + (v - by).powi(2);
                    s += amp[c] * (-d2 / (2.0 * r * r)).exp();
                }
                s += 0.08 * (freq * u * std::f64::consts::TAU).sin() * (freq * v * 3.1).cos();
                plane.push(s);
            }
        }
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        data.extend(plane.iter().map(|&s| 0.05 + 0.9 * (s - lo) / span));
    }
    Tensor::chw(3, h, w, data).unwrap()
}

/// `n` (degraded, clean) pairs sharing one degradation.
pub fn degraded_pairs(n: usize, h: usize, w: usize, seed: u64, deg: &Degradation) -> Vec<(Tensor, Tensor)> {
    (0..n)
        .map(|i| {
            let clean = clean_image(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), h, w);
            (deg.apply(&clean), clean)
        })
        .collect()
}
