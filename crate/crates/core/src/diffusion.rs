//! Deterministic DDIM machinery: the linear beta schedule, clean-estimate /
//! re-noising steps, the encoder/decoder and denoiser contracts, and two
//! analytic denoisers used in place of a pretrained backbone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::{blur_planes, ImageBuf};

/// Latent-space tensor. Same planar layout as [`ImageBuf`] but values are
/// unbounded reals; only finiteness is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LatentImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "latent data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("latent data".into()));
        }
        Ok(Self { width, height, channels, data })
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &LatentImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    /// `ca * self + cb * other`, elementwise.
    pub fn combine(&self, ca: f64, other: &LatentImage, cb: f64) -> Result<LatentImage> {
        if !self.same_shape(other) {
            return Err(Error::shape("latent combine operands differ in shape"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ca * a + cb * b)
            .collect();
        Ok(LatentImage { width: self.width, height: self.height, channels: self.channels, data })
    }

    pub fn scale(&self, k: f64) -> LatentImage {
        LatentImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| k * v).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &LatentImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<&ImageBuf> for LatentImage {
    fn from(img: &ImageBuf) -> Self {
        LatentImage {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.data().to_vec(),
        }
    }
}

/// Seeded standard-normal latent, the inference starting point Z_T.
pub fn sample_normal_latent(width: usize, height: usize, channels: usize, seed: u64) -> LatentImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    LatentImage { width, height, channels, data }
}

/// Per-timestep diffusion coefficients. Timesteps are 1-based; index 0 holds
/// the `alpha_bar(0) = 1` convention so the final step returns the clean
/// estimate exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// alpha_bar_t for t in 0..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.timesteps() {
            return Err(Error::param(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(())
    }
}

/// Linear beta schedule over `t = 1..=timesteps`.
pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if timesteps < 2 {
        return Err(Error::param("schedule needs at least 2 timesteps"));
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::param(format!(
            "need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let step = (beta_end - beta_start) / (timesteps - 1) as f64;
    let betas: Vec<f64> = (0..timesteps).map(|i| beta_start + step * i as f64).collect();
    let mut alpha_bars = Vec::with_capacity(timesteps + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0f64;
    for &b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    debug_assert!(alpha_bars.windows(2).all(|w| w[1] < w[0]));
    Ok(NoiseSchedule { betas, alpha_bars })
}

/// Clean-image estimate: (Z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
pub fn predict_x0(
    z_t: &LatentImage,
    eps: &LatentImage,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentImage> {
    sched.check_t(t)?;
    if !z_t.same_shape(eps) {
        return Err(Error::shape("predict_x0 operands differ in shape"));
    }
    let abar = sched.alpha_bar(t);
    z_t.combine(1.0 / abar.sqrt(), eps, -(1.0 - abar).sqrt() / abar.sqrt())
}

/// Deterministic DDIM update: sqrt(abar_{t-1}) x0 + sqrt(1 - abar_{t-1}) eps.
/// At t = 1 this returns x0 exactly.
pub fn step_prev(
    x0: &LatentImage,
    eps: &LatentImage,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentImage> {
    sched.check_t(t)?;
    if !x0.same_shape(eps) {
        return Err(Error::shape("step_prev operands differ in shape"));
    }
    if t == 1 {
        return Ok(x0.clone());
    }
    let abar_prev = sched.alpha_bar(t - 1);
    x0.combine(abar_prev.sqrt(), eps, (1.0 - abar_prev).sqrt())
}

/// Noise predictor contract; `cond` is the single conditioning slot used for
/// both the LR latent and the structural embedding.
pub trait Denoiser {
    fn predict(&self, z: &LatentImage, cond: &LatentImage, t: usize) -> LatentImage;
}

/// Encoder/decoder contract between image and latent space.
pub trait Codec {
    fn encode(&self, img: &ImageBuf) -> LatentImage;
    fn decode(&self, z: &LatentImage) -> ImageBuf;
}

/// Pixel space as latent space; exact round-trip.
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn encode(&self, img: &ImageBuf) -> LatentImage {
        LatentImage::from(img)
    }

    fn decode(&self, z: &LatentImage) -> ImageBuf {
        ImageBuf::new(z.width(), z.height(), z.channels(), z.data().to_vec())
            .expect("latent data is finite")
    }
}

/// Denoiser whose implied clean image is a fixed target; the sampler
/// converges to it from any starting latent. Ignores `cond`.
pub struct OracleDenoiser {
    target: LatentImage,
    sched: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(target: LatentImage, sched: NoiseSchedule) -> Self {
        Self { target, sched }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, z: &LatentImage, _cond: &LatentImage, t: usize) -> LatentImage {
        let abar = self.sched.alpha_bar(t);
        z.combine(1.0 / (1.0 - abar).sqrt(), &self.target, -abar.sqrt() / (1.0 - abar).sqrt())
            .expect("oracle target shaped like z")
    }
}

/// Seeded band-limited perturbation that ramps up toward the end of
/// inference, standing in for the backbone's spurious detail generation.
#[derive(Debug, Clone, PartialEq)]
pub struct HallucinationSpec {
    /// Peak perturbation amplitude (0 disables it).
    pub a_max: f64,
    /// Ramp exponent p >= 1 in a(t) = a_max (1 - t/T)^p.
    pub exponent: f64,
    /// Frequency band of the field: white noise blurred at `band_lo` minus
    /// its blur at `band_hi` (0 <= band_lo < band_hi). A small `band_lo`
    /// keeps fine texture; the gap to `band_hi` sets the structure scale.
    pub band_lo: f64,
    pub band_hi: f64,
    pub seed: u64,
}

impl Default for HallucinationSpec {
    fn default() -> Self {
        Self { a_max: 0.25, exponent: 3.0, band_lo: 1.2, band_hi: 3.0, seed: 17 }
    }
}

impl HallucinationSpec {
    pub fn amplitude(&self, t: usize, total: usize) -> f64 {
        self.a_max * (1.0 - t as f64 / total as f64).powf(self.exponent)
    }

    /// Unit-RMS band-pass noise field, deterministic per (seed, shape).
    pub fn field(&self, width: usize, height: usize, channels: usize) -> LatentImage {
        let white = sample_normal_latent(width, height, channels, self.seed);
        let lo = if self.band_lo > 0.0 {
            blur_planes(white.data(), width, height, channels, self.band_lo)
        } else {
            white.data().to_vec()
        };
        let hi = blur_planes(white.data(), width, height, channels, self.band_hi.max(1e-6));
        let mut data: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| l - h).collect();
        let rms = (data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64).sqrt();
        if rms > 0.0 {
            for v in &mut data {
                *v /= rms;
            }
        }
        LatentImage { width, height, channels, data }
    }
}

/// How much the backbone's clean estimate follows the current latent versus
/// the conditioning, as a function of the timestep fraction f = t/T:
///
///   m(f) = start f^start_decay + end (1 - f)^end_ramp
///
/// High at the start (the latent is all the model has), near zero mid-phase
/// (conditioning anchors the structure), and rising again at low noise
/// levels where the latent is nearly clean and carries trustworthy detail.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustCurve {
    pub start: f64,
    pub end: f64,
    pub start_decay: f64,
    pub end_ramp: f64,
}

impl Default for TrustCurve {
    fn default() -> Self {
        Self { start: 0.9, end: 0.6, start_decay: 12.0, end_ramp: 3.0 }
    }
}

impl TrustCurve {
    pub fn at(&self, t: usize, total: usize) -> f64 {
        let f = t as f64 / total as f64;
        self.start * f.powf(self.start_decay) + self.end * (1.0 - f).powf(self.end_ramp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.start) || !(0.0..1.0).contains(&self.end) {
            return Err(Error::param("trust weights must be in [0, 1)"));
        }
        if self.start_decay < 1.0 || self.end_ramp < 1.0 {
            return Err(Error::param("trust exponents must be >= 1"));
        }
        Ok(())
    }
}

/// RMS of the detail band `img - blur(img, sigma)`.
pub fn detail_rms(img: &LatentImage, sigma: f64) -> f64 {
    let low = blur_planes(img.data(), img.width(), img.height(), img.channels(), sigma.max(1e-6));
    let sum: f64 = img.data().iter().zip(&low).map(|(v, l)| (v - l) * (v - l)).sum();
    (sum / img.data().len() as f64).sqrt()
}

/// Stylized restoration backbone. Its implied clean image is an unsharp-mask
/// enhancement of the conditioning latent plus the hallucination field,
/// corrected by the low-frequency part of how far the naive latent inversion
/// has drifted from that estimate:
///
///   g(cond, t) = cond + detail_gain (cond - blur(cond, detail_sigma))
///              + a(t) d(cond) field
///   clean(z, cond, t) = g + m(t) blur(z / sqrt(abar_t) - g, mem_sigma)
///
/// d(cond) damps the hallucination by how much detail the conditioning
/// already carries, via a smoothstep over r = detail_rms(cond)/detail_ref:
/// d = 1 for r <= damp_lo, d = 0 for r >= damp_hi. The backbone invents
/// texture where the condition is ambiguous; a sharp condition leaves
/// nothing to invent. The same factor scales the unsharp gain.
///
/// The blurred deviation term is what carries guidance inserted into the
/// latent across steps; fine-grained latent noise is ignored. With a zero
/// trust curve the prediction is the memoryless form
/// (z - sqrt(abar_t) g) / sqrt(1 - abar_t).
pub struct RestorationDenoiser {
    pub detail_gain: f64,
    pub detail_sigma: f64,
    /// Detail-band RMS scale for the damping ramp; 0 disables damping.
    pub detail_ref: f64,
    pub damp_lo: f64,
    pub damp_hi: f64,
    pub trust: TrustCurve,
    pub mem_sigma: f64,
    pub halluc: HallucinationSpec,
    sched: NoiseSchedule,
}

impl RestorationDenoiser {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        detail_gain: f64,
        detail_sigma: f64,
        detail_ref: f64,
        damp_lo: f64,
        damp_hi: f64,
        trust: TrustCurve,
        mem_sigma: f64,
        halluc: HallucinationSpec,
        sched: NoiseSchedule,
    ) -> Result<Self> {
        if detail_gain < 0.0 {
            return Err(Error::param("detail_gain must be >= 0"));
        }
        if detail_ref < 0.0 || damp_lo <= 0.0 || damp_hi <= damp_lo {
            return Err(Error::param("need detail_ref >= 0 and 0 < damp_lo < damp_hi"));
        }
        if mem_sigma < 0.0 {
            return Err(Error::param("mem_sigma must be >= 0"));
        }
        if halluc.a_max < 0.0 || halluc.exponent < 1.0 {
            return Err(Error::param("hallucination needs a_max >= 0 and exponent >= 1"));
        }
        if halluc.band_lo < 0.0 || halluc.band_hi <= halluc.band_lo {
            return Err(Error::param("hallucination band needs 0 <= band_lo < band_hi"));
        }
        trust.validate()?;
        Ok(Self {
            detail_gain,
            detail_sigma,
            detail_ref,
            damp_lo,
            damp_hi,
            trust,
            mem_sigma,
            halluc,
            sched,
        })
    }

    /// Hallucination damping factor in [0, 1] for a given conditioning.
    pub fn damp(&self, cond: &LatentImage) -> f64 {
        if self.detail_ref <= 0.0 {
            return 1.0;
        }
        let relief = detail_rms(cond, self.detail_sigma) / self.detail_ref;
        let x = ((self.damp_hi - relief) / (self.damp_hi - self.damp_lo)).clamp(0.0, 1.0);
        x * x * (3.0 - 2.0 * x)
    }

    /// Unsharp-mask detail enhancement of the conditioning latent, scaled by
    /// the damping factor: a condition that already carries full detail is
    /// passed through unchanged.
    pub fn enhance(&self, cond: &LatentImage) -> LatentImage {
        let gain = self.detail_gain * self.damp(cond);
        if gain == 0.0 {
            return cond.clone();
        }
        let blurred = blur_planes(
            cond.data(),
            cond.width(),
            cond.height(),
            cond.channels(),
            self.detail_sigma,
        );
        let data = cond
            .data()
            .iter()
            .zip(&blurred)
            .map(|(c, b)| c + gain * (c - b))
            .collect();
        LatentImage {
            width: cond.width(),
            height: cond.height(),
            channels: cond.channels(),
            data,
        }
    }

    /// The clean image this denoiser drives the sampler toward at timestep t.
    pub fn implied_clean(&self, z: &LatentImage, cond: &LatentImage, t: usize) -> LatentImage {
        let total = self.sched.timesteps();
        let mut g = self.enhance(cond);
        let amp = self.halluc.amplitude(t, total) * self.damp(cond);
        if amp > 0.0 {
            let field = self.halluc.field(cond.width(), cond.height(), cond.channels());
            g = g.combine(1.0, &field, amp).expect("field shaped like cond");
        }
        let m = self.trust.at(t, total);
        if m > 0.0 {
            let naive = z.scale(1.0 / self.sched.alpha_bar(t).sqrt());
            let dev = naive.combine(1.0, &g, -1.0).expect("naive estimate shaped like g");
            let dev = if self.mem_sigma > 0.0 {
                LatentImage {
                    width: dev.width,
                    height: dev.height,
                    channels: dev.channels,
                    data: blur_planes(
                        dev.data(),
                        dev.width,
                        dev.height,
                        dev.channels,
                        self.mem_sigma,
                    ),
                }
            } else {
                dev
            };
            g = g.combine(1.0, &dev, m).expect("deviation shaped like g");
        }
        g
    }
}

impl Denoiser for RestorationDenoiser {
    fn predict(&self, z: &LatentImage, cond: &LatentImage, t: usize) -> LatentImage {
        let clean = self.implied_clean(z, cond, t);
        let abar = self.sched.alpha_bar(t);
        z.combine(1.0 / (1.0 - abar).sqrt(), &clean, -abar.sqrt() / (1.0 - abar).sqrt())
            .expect("clean estimate shaped like z")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latent(w: usize, h: usize, seed: u64) -> LatentImage {
        sample_normal_latent(w, h, 1, seed)
    }

    fn zero_trust() -> TrustCurve {
        TrustCurve { start: 0.0, end: 0.0, start_decay: 1.0, end_ramp: 1.0 }
    }

    #[test]
    fn schedule_two_step_products() {
        // beta = (0.1, 0.2) gives abar = (0.9, 0.72)
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-12);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-12);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn schedule_monotone_and_validated() {
        let s = make_schedule(200, 1e-4, 0.02).unwrap();
        assert!(s.alpha_bar(200) < s.alpha_bar(1));
        assert!(s.alpha_bar(1) > 0.99);
        assert!(make_schedule(1, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.02, 1e-4).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
    }

    #[test]
    fn alpha_bar_matches_log_domain_oracle() {
        let s = make_schedule(200, 1e-4, 0.02).unwrap();
        let step = (0.02 - 1e-4) / 199.0;
        let log_sum: f64 = (0..200).map(|i| (1.0f64 - (1e-4 + step * i as f64)).ln()).sum();
        let oracle = log_sum.exp();
        assert!((s.alpha_bar(200) - oracle).abs() / oracle < 1e-10);
    }

    #[test]
    fn predict_x0_inverts_forward_noising() {
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let x = latent(6, 6, 1);
        let n = latent(6, 6, 2);
        for t in [1, 10, 25, 50] {
            let abar = s.alpha_bar(t);
            let z = x.combine(abar.sqrt(), &n, (1.0 - abar).sqrt()).unwrap();
            let rec = predict_x0(&z, &n, t, &s).unwrap();
            assert!(rec.max_abs_diff(&x) < 1e-6, "t={t}");
        }
    }

    #[test]
    fn predict_x0_zero_noise() {
        let s = make_schedule(10, 1e-3, 0.02).unwrap();
        let z = latent(4, 4, 3);
        let zero = z.scale(0.0);
        let x0 = predict_x0(&z, &zero, 5, &s).unwrap();
        let expect = z.scale(1.0 / s.alpha_bar(5).sqrt());
        assert!(x0.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn step_prev_final_step_returns_x0_exactly() {
        let s = make_schedule(10, 1e-3, 0.02).unwrap();
        let x0 = latent(4, 4, 4);
        let eps = latent(4, 4, 5);
        let z0 = step_prev(&x0, &eps, 1, &s).unwrap();
        assert_eq!(z0, x0);
    }

    #[test]
    fn step_prev_zero_noise() {
        let s = make_schedule(10, 1e-3, 0.02).unwrap();
        let x0 = latent(4, 4, 6);
        let zero = x0.scale(0.0);
        let z = step_prev(&x0, &zero, 5, &s).unwrap();
        let expect = x0.scale(s.alpha_bar(4).sqrt());
        assert!(z.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn two_step_recurrence_matches_scalar_oracle() {
        let s = make_schedule(10, 1e-3, 0.02).unwrap();
        let t = 7;
        let (z, e) = (2.0f64, -0.5f64);
        let zl = LatentImage::new(1, 1, 1, vec![z]).unwrap();
        let el = LatentImage::new(1, 1, 1, vec![e]).unwrap();
        let x0 = predict_x0(&zl, &el, t, &s).unwrap();
        let prev = step_prev(&x0, &el, t, &s).unwrap();
        let (a_t, a_p) = (s.alpha_bar(t), s.alpha_bar(t - 1));
        let x0_scalar = (z - (1.0 - a_t).sqrt() * e) / a_t.sqrt();
        let prev_scalar = a_p.sqrt() * x0_scalar + (1.0 - a_p).sqrt() * e;
        assert!((prev.data()[0] - prev_scalar).abs() < 1e-12);
    }

    #[test]
    fn oracle_denoiser_fixed_point() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let target = latent(5, 5, 7);
        let den = OracleDenoiser::new(target.clone(), s.clone());
        let cond = target.scale(0.0);
        for t in [3, 12, 20] {
            let z = latent(5, 5, 100 + t as u64);
            let eps = den.predict(&z, &cond, t);
            let x0 = predict_x0(&z, &eps, t, &s).unwrap();
            assert!(x0.max_abs_diff(&target) < 1e-5, "t={t}");
        }
    }

    #[test]
    fn oracle_denoiser_full_loop_converges_from_any_start() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let target = latent(5, 5, 8);
        let den = OracleDenoiser::new(target.clone(), s.clone());
        let cond = target.scale(0.0);
        let run = |seed: u64| {
            let mut z = sample_normal_latent(5, 5, 1, seed);
            for t in (1..=20).rev() {
                let eps = den.predict(&z, &cond, t);
                let x0 = predict_x0(&z, &eps, t, &s).unwrap();
                z = step_prev(&x0, &eps, t, &s).unwrap();
            }
            z
        };
        let a = run(1);
        let b = run(2);
        assert!(a.max_abs_diff(&target) < 1e-4);
        // fixed point is independent of the start up to float rounding
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn degenerate_restoration_matches_oracle_behavior() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let cond = latent(6, 6, 9);
        let halluc = HallucinationSpec { a_max: 0.0, ..Default::default() };
        let den = RestorationDenoiser::new(0.0, 1.0, 0.0, 0.85, 0.97, zero_trust(), 0.0, halluc, s.clone()).unwrap();
        let oracle = OracleDenoiser::new(cond.clone(), s.clone());
        let z = latent(6, 6, 10);
        for t in [1, 10, 20] {
            let a = den.predict(&z, &cond, t);
            let b = oracle.predict(&z, &cond, t);
            assert!(a.max_abs_diff(&b) < 1e-12, "t={t}");
        }
    }

    #[test]
    fn memoryless_loop_lands_on_enhanced_cond() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let cond = sample_normal_latent(8, 8, 1, 11).scale(0.1);
        let halluc = HallucinationSpec { a_max: 0.0, ..Default::default() };
        let den = RestorationDenoiser::new(1.5, 1.0, 0.0, 0.85, 0.97, zero_trust(), 0.0, halluc, s.clone()).unwrap();
        let mut z = sample_normal_latent(8, 8, 1, 12);
        for t in (1..=20).rev() {
            let eps = den.predict(&z, &cond, t);
            let x0 = predict_x0(&z, &eps, t, &s).unwrap();
            z = step_prev(&x0, &eps, t, &s).unwrap();
        }
        let f = den.enhance(&cond);
        assert!(z.max_abs_diff(&f) < 1e-6);
    }

    #[test]
    fn denoiser_purity() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let den = RestorationDenoiser::new(
            1.0,
            1.0,
            0.1,
            0.85,
            0.97,
            TrustCurve::default(),
            1.0,
            HallucinationSpec::default(),
            s,
        )
        .unwrap();
        let z = latent(6, 6, 13);
        let cond = latent(6, 6, 14);
        assert_eq!(den.predict(&z, &cond, 9), den.predict(&z, &cond, 9));
    }

    #[test]
    fn identity_codec_roundtrip() {
        let img = crate::synth::synth_image(15, 12, 12);
        let codec = IdentityCodec;
        let back = codec.decode(&codec.encode(&img));
        assert!(img.max_abs_diff(&back) < 1e-6);
    }

    #[test]
    fn hallucination_field_deterministic_unit_rms() {
        let h = HallucinationSpec::default();
        let a = h.field(16, 16, 3);
        let b = h.field(16, 16, 3);
        assert_eq!(a, b);
        let rms = (a.data().iter().map(|v| v * v).sum::<f64>() / a.data().len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
        assert_eq!(h.amplitude(0, 50), h.a_max);
        assert!(h.amplitude(50, 50).abs() < 1e-12);
    }
}
