//! LR synthesis: Gaussian blur, bicubic downsampling, and a JPEG
//! distortion round-trip (block DCT + quantization, no entropy coding).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageBuf, ResampleKernel};

/// Pipeline is fixed: blur, then downsample, then JPEG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub scale_factor: usize,
    /// 0 disables the blur stage.
    pub blur_sigma: f64,
    /// `None` disables the compression stage.
    pub jpeg_quality: Option<u8>,
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale_factor < 1 {
            return Err(Error::param("scale_factor must be >= 1"));
        }
        if self.blur_sigma < 0.0 {
            return Err(Error::param("blur_sigma must be >= 0"));
        }
        if let Some(q) = self.jpeg_quality {
            if !(1..=100).contains(&q) {
                return Err(Error::param(format!("jpeg_quality {q} outside [1, 100]")));
            }
        }
        Ok(())
    }

    /// Short label of the enabled stages, e.g. "D+B+J".
    pub fn label(&self) -> String {
        let mut parts = vec!["D"];
        if self.blur_sigma > 0.0 {
            parts.push("B");
        }
        if self.jpeg_quality.is_some() {
            parts.push("J");
        }
        parts.join("+")
    }
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self { scale_factor: 4, blur_sigma: 1.2, jpeg_quality: Some(50) }
    }
}

/// Synthesize the LR input. `seed` is reserved for stochastic degradations
/// and currently unused; the pipeline is fully deterministic.
pub fn degrade(hr: &ImageBuf, spec: &DegradationSpec, _seed: u64) -> Result<ImageBuf> {
    spec.validate()?;
    if hr.width() % spec.scale_factor != 0 || hr.height() % spec.scale_factor != 0 {
        return Err(Error::param(format!(
            "image {}x{} not divisible by scale factor {}",
            hr.width(),
            hr.height(),
            spec.scale_factor
        )));
    }
    let mut img = if spec.blur_sigma > 0.0 {
        hr.gaussian_blur(spec.blur_sigma)?
    } else {
        hr.clone()
    };
    if spec.scale_factor > 1 {
        img = img.resize(
            hr.width() / spec.scale_factor,
            hr.height() / spec.scale_factor,
            ResampleKernel::catmull_rom(),
        )?;
    }
    if let Some(q) = spec.jpeg_quality {
        img = jpeg_roundtrip(&img, q)?;
    }
    Ok(img)
}

/// Annex-K luminance quantization table, applied to every channel.
const BASE_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

fn quant_table(quality: u8) -> [f64; 64] {
    let scale = if quality < 50 {
        5000.0 / quality as f64
    } else {
        200.0 - 2.0 * quality as f64
    };
    let mut table = [0.0; 64];
    for (t, &base) in table.iter_mut().zip(BASE_QUANT.iter()) {
        *t = ((base as f64 * scale / 100.0).round()).clamp(1.0, 255.0);
    }
    table
}

/// Orthonormal 8x8 DCT-II basis matrix, row u = basis function u.
fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let cu = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = cu * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

/// DCT/quantize/dequantize/inverse-DCT each 8x8 block, in 0..255 levels with
/// the usual -128 shift. Blocks are padded by edge replication and cropped
/// back; no chroma subsampling, no entropy coding.
pub fn jpeg_roundtrip(img: &ImageBuf, quality: u8) -> Result<ImageBuf> {
    if !(1..=100).contains(&quality) {
        return Err(Error::param(format!("jpeg quality {quality} outside [1, 100]")));
    }
    let table = quant_table(quality);
    let dct = dct_matrix();
    let (w, h) = (img.width(), img.height());
    let bw = w.div_ceil(8) * 8;
    let bh = h.div_ceil(8) * 8;
    let mut out = Vec::with_capacity(w * h * img.channels());

    for c in 0..img.channels() {
        let plane = img.plane(c);
        // padded level-shifted plane
        let mut padded = vec![0.0; bw * bh];
        for y in 0..bh {
            let sy = y.min(h - 1);
            for x in 0..bw {
                let sx = x.min(w - 1);
                padded[y * bw + x] = plane[sy * w + sx] * 255.0 - 128.0;
            }
        }
        for by in (0..bh).step_by(8) {
            for bx in (0..bw).step_by(8) {
                let mut block = [[0.0f64; 8]; 8];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y][x] = padded[(by + y) * bw + bx + x];
                    }
                }
                let coeffs = mat_sandwich(&dct, &block, false);
                let mut quantized = [[0.0f64; 8]; 8];
                for u in 0..8 {
                    for v in 0..8 {
                        let q = table[u * 8 + v];
                        quantized[u][v] = (coeffs[u][v] / q).round() * q;
                    }
                }
                let rec = mat_sandwich(&dct, &quantized, true);
                for y in 0..8 {
                    for x in 0..8 {
                        padded[(by + y) * bw + bx + x] = rec[y][x];
                    }
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                out.push((padded[y * bw + x] + 128.0) / 255.0);
            }
        }
    }
    ImageBuf::new(w, h, img.channels(), out)
}

/// `C X C^T` (forward DCT) or `C^T X C` (inverse) for orthonormal `C`.
fn mat_sandwich(c: &[[f64; 8]; 8], x: &[[f64; 8]; 8], inverse: bool) -> [[f64; 8]; 8] {
    let mut tmp = [[0.0; 8]; 8];
    let mut out = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += if inverse { c[k][i] * x[k][j] } else { c[i][k] * x[k][j] };
            }
            tmp[i][j] = acc;
        }
    }
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += if inverse { tmp[i][k] * c[k][j] } else { tmp[i][k] * c[j][k] };
            }
            out[i][j] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_image;

    #[test]
    fn identity_pipeline_is_identity() {
        let hr = synth_image(1, 16, 16);
        let spec = DegradationSpec { scale_factor: 1, blur_sigma: 0.0, jpeg_quality: None };
        let lr = degrade(&hr, &spec, 0).unwrap();
        assert!(hr.max_abs_diff(&lr) < 1e-6);
    }

    #[test]
    fn dimension_contract() {
        let hr = synth_image(2, 64, 64);
        let spec = DegradationSpec { scale_factor: 4, blur_sigma: 0.0, jpeg_quality: None };
        let lr = degrade(&hr, &spec, 0).unwrap();
        assert_eq!((lr.width(), lr.height()), (16, 16));
    }

    #[test]
    fn indivisible_dimensions_rejected() {
        let hr = synth_image(2, 30, 30);
        let spec = DegradationSpec { scale_factor: 4, blur_sigma: 0.0, jpeg_quality: None };
        assert!(degrade(&hr, &spec, 0).is_err());
    }

    #[test]
    fn matches_composition_of_verified_stages() {
        let hr = synth_image(3, 32, 32);
        let spec = DegradationSpec { scale_factor: 2, blur_sigma: 1.2, jpeg_quality: Some(50) };
        let lr = degrade(&hr, &spec, 0).unwrap();
        let manual = jpeg_roundtrip(
            &hr.gaussian_blur(1.2)
                .unwrap()
                .resize(16, 16, crate::image::ResampleKernel::catmull_rom())
                .unwrap(),
            50,
        )
        .unwrap();
        assert_eq!(lr, manual);
    }

    #[test]
    fn determinism() {
        let hr = synth_image(4, 32, 32);
        let spec = DegradationSpec::default();
        assert_eq!(degrade(&hr, &spec, 9).unwrap(), degrade(&hr, &spec, 9).unwrap());
    }

    #[test]
    fn jpeg_quality_validation() {
        let img = synth_image(5, 8, 8);
        assert!(jpeg_roundtrip(&img, 0).is_err());
        assert!(jpeg_roundtrip(&img, 101).is_err());
    }

    #[test]
    fn jpeg_quality_100_bound() {
        // all quantization steps are 1 at quality 100, so per-coefficient
        // rounding error is <= 0.5; on natural (non-adversarial) content the
        // pixel error stays within one 8-bit level
        let img = synth_image(6, 32, 32).gaussian_blur(1.0).unwrap();
        let rt = jpeg_roundtrip(&img, 100).unwrap();
        assert!(img.max_abs_diff(&rt) <= 1.0 / 255.0 + 1e-12);
        // hard bound for arbitrary content: 64 coefficients x 0.5 x 0.25
        let sharp = synth_image(6, 32, 32);
        let rt = jpeg_roundtrip(&sharp, 100).unwrap();
        assert!(sharp.max_abs_diff(&rt) <= 8.0 / 255.0);
    }

    #[test]
    fn jpeg_constant_stays_constant() {
        for q in [1u8, 10, 50, 90, 100] {
            let img = ImageBuf::constant(20, 12, 1, 0.5).unwrap();
            let rt = jpeg_roundtrip(&img, q).unwrap();
            let (lo, hi) = rt
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(hi - lo < 1e-6, "q={q} spread={}", hi - lo);
        }
    }

    #[test]
    fn odd_dimensions_pad_and_crop() {
        let img = synth_image(7, 20, 20).center_crop(13).unwrap();
        let rt = jpeg_roundtrip(&img, 80).unwrap();
        assert_eq!((rt.width(), rt.height()), (13, 13));
    }
}
