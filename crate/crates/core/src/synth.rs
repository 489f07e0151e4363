//! Seeded synthetic test images: smooth shading, geometric shapes, and a
//! little texture. Used by the CLI corpus generator and the test suites so
//! experiments never depend on external assets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::ImageBuf;

/// Deterministic structured RGB image for the given seed.
pub fn synth_image(seed: u64, width: usize, height: usize) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height;
    let mut data = vec![0.0f64; n * 3];

    // smooth base shading, different phase per channel
    for c in 0..3 {
        let fx = rng.random_range(0.5..2.0);
        let fy = rng.random_range(0.5..2.0);
        let px = rng.random_range(0.0..std::f64::consts::TAU);
        let py = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..height {
            for x in 0..width {
                let u = x as f64 / width as f64;
                let v = y as f64 / height as f64;
                let s = 0.5
                    + 0.18 * (std::f64::consts::TAU * fx * u + px).sin()
                    + 0.18 * (std::f64::consts::TAU * fy * v + py).cos();
                data[c * n + y * width + x] = s;
            }
        }
    }

    // opaque rectangles and discs shared across channels (edges for SSIM to see)
    let shapes = 6 + (rng.random_range(0..4u32) as usize);
    for _ in 0..shapes {
        let color: [f64; 3] = [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ];
        let cx = rng.random_range(0..width);
        let cy = rng.random_range(0..height);
        let r = rng.random_range(width.max(8) / 8..width.max(8) / 3);
        let disc = rng.random_bool(0.5);
        for y in cy.saturating_sub(r)..(cy + r).min(height) {
            for x in cx.saturating_sub(r)..(cx + r).min(width) {
                let inside = if disc {
                    let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
                    dx * dx + dy * dy <= (r * r) as f64
                } else {
                    true
                };
                if inside {
                    for c in 0..3 {
                        data[c * n + y * width + x] = color[c];
                    }
                }
            }
        }
    }

    // fine texture
    for v in data.iter_mut() {
        *v += rng.random_range(-0.02..0.02);
    }

    // normalize into a safe interior range
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-9);
    for v in data.iter_mut() {
        *v = 0.05 + 0.9 * (*v - lo) / span;
    }

    ImageBuf::new(width, height, 3, data).expect("synthetic data is finite")
}
