//! Planar floating-point images with bicubic resampling and Gaussian
//! convolution. Intensities are nominally in `[0, 1]` but are never clamped
//! inside kernels; clamping happens only at 8-bit export.

use crate::error::{Error, Result};

/// Planar image: channel planes stored back to back, row-major within a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("image dimensions must be >= 1"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    /// BT.601 full-range luma; 1-channel images are returned as a copy.
    pub fn to_luma(&self) -> ImageBuf {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.width * self.height;
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
        }
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: 1,
            data: out,
        }
    }

    pub fn resize(&self, new_w: usize, new_h: usize, kernel: ResampleKernel) -> Result<ImageBuf> {
        if new_w == 0 || new_h == 0 {
            return Err(Error::param("resize target dimensions must be >= 1"));
        }
        let data = resample_planes(
            &self.data,
            self.width,
            self.height,
            self.channels,
            new_w,
            new_h,
            kernel,
        );
        Ok(ImageBuf {
            width: new_w,
            height: new_h,
            channels: self.channels,
            data,
        })
    }

    pub fn gaussian_blur(&self, sigma: f64) -> Result<ImageBuf> {
        if !(sigma > 0.0) {
            return Err(Error::param(format!("blur sigma must be > 0, got {sigma}")));
        }
        let data = blur_planes(&self.data, self.width, self.height, self.channels, sigma);
        Ok(ImageBuf {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        })
    }

    pub fn center_crop(&self, size: usize) -> Result<ImageBuf> {
        if size == 0 || size > self.width || size > self.height {
            return Err(Error::param(format!(
                "crop size {size} does not fit {}x{}",
                self.width, self.height
            )));
        }
        let x0 = (self.width - size) / 2;
        let y0 = (self.height - size) / 2;
        let mut data = Vec::with_capacity(size * size * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + size {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + size]);
            }
        }
        ImageBuf::new(size, size, self.channels, data)
    }

    /// Largest absolute difference over all samples.
    pub fn max_abs_diff(&self, other: &ImageBuf) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResampleKernel {
    /// Keys cubic with sharpness parameter `a` (Catmull-Rom at -0.5).
    Bicubic { a: f64 },
    Nearest,
}

impl ResampleKernel {
    pub fn catmull_rom() -> Self {
        ResampleKernel::Bicubic { a: -0.5 }
    }
}

/// Keys cubic kernel weight at distance `d`.
pub fn bicubic_weight(d: f64, a: f64) -> f64 {
    let d = d.abs();
    if d <= 1.0 {
        (a + 2.0) * d * d * d - (a + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        a * d * d * d - 5.0 * a * d * d + 8.0 * a * d - 4.0 * a
    } else {
        0.0
    }
}

/// Precomputed clamped source taps for one output axis.
/// Source coordinate convention: src = (dst + 0.5) * scale - 0.5.
fn axis_taps(src_len: usize, dst_len: usize, kernel: ResampleKernel) -> Vec<(Vec<usize>, Vec<f64>)> {
    let scale = src_len as f64 / dst_len as f64;
    let clamp = |i: i64| i.clamp(0, src_len as i64 - 1) as usize;
    (0..dst_len)
        .map(|dst| {
            let src = (dst as f64 + 0.5) * scale - 0.5;
            match kernel {
                ResampleKernel::Nearest => (vec![clamp(src.round() as i64)], vec![1.0]),
                ResampleKernel::Bicubic { a } => {
                    let base = src.floor() as i64;
                    let mut idx = Vec::with_capacity(4);
                    let mut w = Vec::with_capacity(4);
                    for i in base - 1..=base + 2 {
                        idx.push(clamp(i));
                        w.push(bicubic_weight(src - i as f64, a));
                    }
                    (idx, w)
                }
            }
        })
        .collect()
}

pub(crate) fn resample_planes(
    data: &[f64],
    src_w: usize,
    src_h: usize,
    channels: usize,
    dst_w: usize,
    dst_h: usize,
    kernel: ResampleKernel,
) -> Vec<f64> {
    let htaps = axis_taps(src_w, dst_w, kernel);
    let vtaps = axis_taps(src_h, dst_h, kernel);
    let mut out = Vec::with_capacity(dst_w * dst_h * channels);
    let mut mid = vec![0.0; dst_w * src_h];
    for c in 0..channels {
        let plane = &data[c * src_w * src_h..(c + 1) * src_w * src_h];
        // horizontal pass
        for y in 0..src_h {
            let row = &plane[y * src_w..(y + 1) * src_w];
            for (x, (idx, w)) in htaps.iter().enumerate() {
                mid[y * dst_w + x] = idx.iter().zip(w).map(|(&i, &wi)| wi * row[i]).sum();
            }
        }
        // vertical pass
        for (idx, w) in &vtaps {
            for x in 0..dst_w {
                out.push(idx.iter().zip(w).map(|(&i, &wi)| wi * mid[i * dst_w + x]).sum());
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian taps with radius ceil(3 sigma).
pub(crate) fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian convolution with clamp-to-edge boundary.
pub(crate) fn blur_planes(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    sigma: f64,
) -> Vec<f64> {
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as i64;
    let n = width * height;
    let mut out = Vec::with_capacity(data.len());
    let mut mid = vec![0.0; n];
    for c in 0..channels {
        let plane = &data[c * n..(c + 1) * n];
        for y in 0..height {
            let row = &plane[y * width..(y + 1) * width];
            for x in 0..width as i64 {
                let mut acc = 0.0;
                for (k, &w) in taps.iter().enumerate() {
                    let sx = (x + k as i64 - radius).clamp(0, width as i64 - 1) as usize;
                    acc += w * row[sx];
                }
                mid[y as usize * width + x as usize] = acc;
            }
        }
        for y in 0..height as i64 {
            for x in 0..width {
                let mut acc = 0.0;
                for (k, &w) in taps.iter().enumerate() {
                    let sy = (y + k as i64 - radius).clamp(0, height as i64 - 1) as usize;
                    acc += w * mid[sy * width + x];
                }
                out.push(acc);
            }
        }
    }
    out
}
