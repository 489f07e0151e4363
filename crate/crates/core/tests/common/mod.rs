//! Shared fixtures for the integration tests: an independent per-window SSIM
//! reference and a codec that counts encode/decode traffic.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structsr::diffusion::{Codec, LatentImage};
use structsr::image::ImageBuf;
use structsr::metrics::{SsimParams, SsimWindow};

/// BT.601 luma, written out independently of the library's conversion.
fn luma_plane(img: &ImageBuf) -> Vec<f64> {
    let n = img.width() * img.height();
    if img.channels() == 1 {
        return img.plane(0).to_vec();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..n).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect()
}

/// 1-D window weights computed from the definition rather than the library's
/// shared blur taps. Matches the library convention (truncation at radius
/// ceil(3 sigma)) for any size within that support.
fn window_weights(params: &SsimParams) -> Vec<f64> {
    match params.window {
        SsimWindow::Gaussian { sigma, size } => {
            let half = (size / 2) as i64;
            let cutoff = (3.0 * sigma).ceil() as i64;
            let mut w: Vec<f64> = (-half..=half)
                .map(|d| {
                    if d.abs() > cutoff {
                        0.0
                    } else {
                        (-(d as f64) * (d as f64) / (2.0 * sigma * sigma)).exp()
                    }
                })
                .collect();
            let sum: f64 = w.iter().sum();
            for v in &mut w {
                *v /= sum;
            }
            w
        }
        SsimWindow::Uniform { size } => vec![1.0 / size as f64; size],
    }
}

/// Brute-force SSIM: every window position evaluated directly with 2-D
/// weights and centered moments, no separable filtering and no
/// E[x^2] - mu^2 shortcut.
pub fn ssim_brute_force(x: &ImageBuf, y: &ImageBuf, params: &SsimParams) -> f64 {
    assert_eq!((x.width(), x.height()), (y.width(), y.height()));
    let (w, h) = (x.width(), x.height());
    let a = luma_plane(x);
    let b = luma_plane(y);
    let taps = window_weights(params);
    let k = taps.len();
    assert!(w >= k && h >= k);

    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let mut ma = 0.0;
            let mut mb = 0.0;
            for j in 0..k {
                for i in 0..k {
                    let wt = taps[j] * taps[i];
                    let idx = (y0 + j) * w + x0 + i;
                    ma += wt * a[idx];
                    mb += wt * b[idx];
                }
            }
            let mut va = 0.0;
            let mut vb = 0.0;
            let mut cov = 0.0;
            for j in 0..k {
                for i in 0..k {
                    let wt = taps[j] * taps[i];
                    let idx = (y0 + j) * w + x0 + i;
                    let (da, db) = (a[idx] - ma, b[idx] - mb);
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            let (c1, c2) = (params.c1, params.c2);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Identity codec that counts calls, for auditing how many decodes a run
/// actually performs.
#[derive(Default)]
pub struct CountingCodec {
    pub encodes: AtomicUsize,
    pub decodes: AtomicUsize,
}

impl Codec for CountingCodec {
    fn encode(&self, img: &ImageBuf) -> LatentImage {
        self.encodes.fetch_add(1, Ordering::Relaxed);
        LatentImage::from(img)
    }

    fn decode(&self, z: &LatentImage) -> ImageBuf {
        self.decodes.fetch_add(1, Ordering::Relaxed);
        ImageBuf::new(z.width(), z.height(), z.channels(), z.data().to_vec()).unwrap()
    }
}

/// Seeded uniform-random image in [0, 1].
pub fn random_image(seed: u64, width: usize, height: usize, channels: usize) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels).map(|_| rng.random_range(0.0..1.0)).collect();
    ImageBuf::new(width, height, channels, data).unwrap()
}
