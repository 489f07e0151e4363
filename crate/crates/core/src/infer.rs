//! Structure-guided inference: early-stage screening of a structural
//! embedding, similarity-weighted noise blending, and decaying latent
//! insertion, wrapped around the plain DDIM loop.

use std::time::Instant;

use crate::diffusion::{
    predict_x0, sample_normal_latent, step_prev, Codec, Denoiser, LatentImage, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::image::{ImageBuf, ResampleKernel};
use crate::metrics::{s_t, SsimParams, Trajectory};

/// Screening state for the early inference window.
#[derive(Debug, Clone)]
pub struct SasState {
    buffer: Vec<(usize, f64)>,
    s_max: f64,
    z_se: Option<LatentImage>,
    capture_t: Option<usize>,
    /// exclusive lower bound of the screening window: updates require t > this
    window_floor: usize,
}

impl SasState {
    /// `window_floor` = T - T_SAS; updates are only legal for t above it.
    pub fn new(window_floor: usize) -> Self {
        Self {
            buffer: Vec::new(),
            s_max: f64::NEG_INFINITY,
            z_se: None,
            capture_t: None,
            window_floor,
        }
    }

    /// Decode the clean estimate, measure its similarity against the LR
    /// input, and keep it as the structural embedding if it is the best so
    /// far. Ties go to the current (later) step.
    pub fn update(
        &mut self,
        z0t: &LatentImage,
        t: usize,
        lr: &ImageBuf,
        codec: &dyn Codec,
        ssim_params: &SsimParams,
    ) -> Result<f64> {
        if t <= self.window_floor {
            return Err(Error::Window { op: "sas_update", t });
        }
        let decoded = codec.decode(z0t);
        let s = s_t(&decoded, lr, ssim_params)?;
        self.observe(t, s, z0t);
        Ok(s)
    }

    /// Record a precomputed similarity score. Split out from [`update`] so
    /// the argmax rule can be exercised with injected sequences.
    pub fn observe(&mut self, t: usize, s: f64, z0t: &LatentImage) {
        self.buffer.push((t, s));
        if s >= self.s_max {
            self.s_max = s;
            self.z_se = Some(z0t.clone());
            self.capture_t = Some(t);
        }
    }

    /// Raw running maximum (may be negative).
    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    /// Maximum clamped to [0, 1] for use as a blend weight.
    pub fn s_max_weight(&self) -> f64 {
        self.s_max.clamp(0.0, 1.0)
    }

    pub fn z_se(&self) -> Option<&LatentImage> {
        self.z_se.as_ref()
    }

    pub fn capture_t(&self) -> Option<usize> {
        self.capture_t
    }

    pub fn buffer(&self) -> &[(usize, f64)] {
        &self.buffer
    }
}

/// Convex noise blend: s_max eps_e + (1 - s_max) eps_o. The endpoints return
/// the corresponding operand bitwise.
pub fn sce_blend(eps_e: &LatentImage, eps_o: &LatentImage, s_max: f64) -> Result<LatentImage> {
    if !eps_e.same_shape(eps_o) {
        return Err(Error::shape("sce_blend operands differ in shape"));
    }
    if !(0.0..=1.0).contains(&s_max) {
        return Err(Error::param(format!("s_max {s_max} outside [0, 1]")));
    }
    if s_max == 0.0 {
        return Ok(eps_o.clone());
    }
    if s_max == 1.0 {
        return Ok(eps_e.clone());
    }
    eps_e.combine(s_max, eps_o, 1.0 - s_max)
}

/// Insertion weight w_t = s_max t / (T - T_SAS), linear in t over the
/// post-screening window.
pub fn ide_weight(t: usize, total: usize, t_sas: usize, s_max: f64) -> Result<f64> {
    if total <= t_sas {
        return Err(Error::param("T must exceed T_SAS"));
    }
    if t > total - t_sas {
        return Err(Error::Window { op: "ide_weight", t });
    }
    if t == 0 {
        return Ok(0.0);
    }
    Ok(s_max * t as f64 / (total - t_sas) as f64)
}

/// Latent insertion: w z_se + (1 - w) z0t. The endpoints return the
/// corresponding operand bitwise.
pub fn ide_insert(z0t: &LatentImage, z_se: &LatentImage, w: f64) -> Result<LatentImage> {
    if !z0t.same_shape(z_se) {
        return Err(Error::shape("ide_insert operands differ in shape"));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::param(format!("insertion weight {w} outside [0, 1]")));
    }
    if w == 0.0 {
        return Ok(z0t.clone());
    }
    if w == 1.0 {
        return Ok(z_se.clone());
    }
    z_se.combine(w, z0t, 1.0 - w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructSrParams {
    /// T_SAS = round(fraction * T); must yield at least 1.
    pub t_sas_fraction: f64,
    pub enable_sce: bool,
    pub enable_ide: bool,
    pub ssim: SsimParams,
}

impl Default for StructSrParams {
    fn default() -> Self {
        Self {
            t_sas_fraction: 0.3,
            enable_sce: true,
            enable_ide: true,
            ssim: SsimParams::default(),
        }
    }
}

impl StructSrParams {
    pub fn t_sas(&self, total: usize) -> Result<usize> {
        if !(0.0..1.0).contains(&self.t_sas_fraction) {
            return Err(Error::param(format!(
                "t_sas_fraction {} outside [0, 1)",
                self.t_sas_fraction
            )));
        }
        let t_sas = (self.t_sas_fraction * total as f64).round() as usize;
        if t_sas < 1 {
            return Err(Error::param(format!(
                "t_sas_fraction {} gives an empty screening window for T = {total}",
                self.t_sas_fraction
            )));
        }
        Ok(t_sas)
    }
}

/// Per-run outcome and cost breakdown.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// Raw screening maximum; `None` for baseline runs.
    pub s_max: Option<f64>,
    pub capture_t: Option<usize>,
    pub wall_ms: f64,
    /// Time spent on screening decodes and similarity measurements.
    pub sas_ms: f64,
    /// Time spent in denoiser calls.
    pub denoise_ms: f64,
    /// Decodes performed by the screening stage (diagnostics decodes and the
    /// final output decode are not included).
    pub sas_decodes: usize,
}

/// Full inference loop. `params = None` runs the unmodified baseline; a
/// guided run with the same seed starts from the identical initial latent.
/// With `diagnostics` on, the similarity trajectory is also measured outside
/// the screening window (extra decodes, pure overhead).
#[allow(clippy::too_many_arguments)]
pub fn run_inference(
    lr: &ImageBuf,
    out_w: usize,
    out_h: usize,
    denoiser: &dyn Denoiser,
    codec: &dyn Codec,
    sched: &NoiseSchedule,
    params: Option<&StructSrParams>,
    seed: u64,
    diagnostics: bool,
) -> Result<(ImageBuf, Trajectory, RunReport)> {
    let start = Instant::now();
    let total = sched.timesteps();
    let lr_up = lr.resize(out_w, out_h, ResampleKernel::catmull_rom())?;
    let cond_lr = codec.encode(&lr_up);
    let mut z = sample_normal_latent(cond_lr.width(), cond_lr.height(), cond_lr.channels(), seed);

    let mut traj = Trajectory::new();
    let mut report = RunReport::default();
    let t_sas = params.map(|p| p.t_sas(total)).transpose()?;
    let mut sas = t_sas.map(|ts| SasState::new(total - ts));

    for t in (1..=total).rev() {
        let d0 = Instant::now();
        let eps_o = denoiser.predict(&z, &cond_lr, t);
        report.denoise_ms += d0.elapsed().as_secs_f64() * 1e3;

        let in_sas_window = match (params, t_sas) {
            (Some(_), Some(ts)) => t > total - ts,
            _ => false,
        };

        if let (Some(p), true) = (params, in_sas_window) {
            let x0 = predict_x0(&z, &eps_o, t, sched)?;
            let s0 = Instant::now();
            let state = sas.as_mut().expect("screening state exists when params do");
            let s = state.update(&x0, t, lr, codec, &p.ssim)?;
            report.sas_ms += s0.elapsed().as_secs_f64() * 1e3;
            report.sas_decodes += 1;
            traj.push(t, s)?;
            z = step_prev(&x0, &eps_o, t, sched)?;
        } else if let Some(p) = params {
            let state = sas.as_ref().expect("screening state exists when params do");
            let z_se = state
                .z_se()
                .ok_or_else(|| Error::param("screening produced no structural embedding"))?;
            let s_w = state.s_max_weight();
            let eps_hat = if p.enable_sce && s_w > 0.0 {
                let d1 = Instant::now();
                let eps_e = denoiser.predict(&z, z_se, t);
                report.denoise_ms += d1.elapsed().as_secs_f64() * 1e3;
                sce_blend(&eps_e, &eps_o, s_w)?
            } else {
                eps_o
            };
            let x0 = predict_x0(&z, &eps_hat, t, sched)?;
            let ts = t_sas.expect("window length exists when params do");
            let w = ide_weight(t, total, ts, s_w)?;
            let inserted = if p.enable_ide { ide_insert(&x0, z_se, w)? } else { x0 };
            if diagnostics {
                let s = s_t(&codec.decode(&inserted), lr, &p.ssim)?;
                traj.push(t, s)?;
            }
            z = step_prev(&inserted, &eps_hat, t, sched)?;
        } else {
            let x0 = predict_x0(&z, &eps_o, t, sched)?;
            if diagnostics {
                let s = s_t(&codec.decode(&x0), lr, &SsimParams::default())?;
                traj.push(t, s)?;
            }
            z = step_prev(&x0, &eps_o, t, sched)?;
        }

        if !z.is_finite() {
            return Err(Error::NanLatent { t });
        }
    }

    if let Some(state) = &sas {
        report.s_max = Some(state.s_max());
        report.capture_t = state.capture_t();
    }
    let out = codec.decode(&z);
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((out, traj, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, IdentityCodec, LatentImage, OracleDenoiser};
    use crate::image::ImageBuf;
    use crate::synth::synth_image;

    fn lat(v: f64) -> LatentImage {
        LatentImage::new(2, 2, 1, vec![v; 4]).unwrap()
    }

    #[test]
    fn sas_argmax_sequence() {
        let mut s = SasState::new(0);
        for (i, v) in [0.3, 0.5, 0.4].into_iter().enumerate() {
            s.observe(10 - i, v, &lat(v));
        }
        assert_eq!(s.s_max(), 0.5);
        assert_eq!(s.capture_t(), Some(9));
        assert_eq!(s.z_se().unwrap().data()[0], 0.5);
    }

    #[test]
    fn sas_single_step() {
        let mut s = SasState::new(0);
        s.observe(5, 0.42, &lat(1.0));
        assert_eq!(s.s_max(), 0.42);
        assert_eq!(s.capture_t(), Some(5));
    }

    #[test]
    fn sas_tie_goes_to_later_step() {
        let mut s = SasState::new(0);
        s.observe(10, 0.5, &lat(1.0));
        s.observe(9, 0.5, &lat(2.0));
        assert_eq!(s.capture_t(), Some(9));
        assert_eq!(s.z_se().unwrap().data()[0], 2.0);
    }

    #[test]
    fn sas_update_outside_window_is_error() {
        let mut s = SasState::new(7);
        let lr = synth_image(1, 16, 16);
        let err = s.update(&lat(0.0), 7, &lr, &IdentityCodec, &SsimParams::default());
        assert!(matches!(err, Err(Error::Window { .. })));
    }

    #[test]
    fn sce_endpoints_and_midpoint() {
        let e = lat(2.0);
        let o = lat(0.0);
        assert_eq!(sce_blend(&e, &o, 0.0).unwrap(), o);
        assert_eq!(sce_blend(&e, &o, 1.0).unwrap(), e);
        assert_eq!(sce_blend(&e, &o, 0.5).unwrap().data()[0], 1.0);
        assert!(sce_blend(&e, &o, 1.5).is_err());
    }

    #[test]
    fn ide_weight_schedule() {
        assert_eq!(ide_weight(0, 200, 60, 0.8).unwrap(), 0.0);
        assert!((ide_weight(140, 200, 60, 0.8).unwrap() - 0.8).abs() < 1e-15);
        assert!((ide_weight(70, 200, 60, 0.8).unwrap() - 0.4).abs() < 1e-15);
        assert!(ide_weight(141, 200, 60, 0.8).is_err());
        assert!(ide_weight(10, 50, 60, 0.8).is_err());
    }

    #[test]
    fn ide_insert_endpoints_and_quarter() {
        let z0 = lat(0.0);
        let se = lat(4.0);
        assert_eq!(ide_insert(&z0, &se, 0.0).unwrap(), z0);
        assert_eq!(ide_insert(&z0, &se, 1.0).unwrap(), se);
        assert_eq!(ide_insert(&z0, &se, 0.25).unwrap().data()[0], 1.0);
    }

    #[test]
    fn oracle_runs_converge_for_baseline_and_guided() {
        let sched = make_schedule(30, 1e-4, 0.02).unwrap();
        let codec = IdentityCodec;
        let lr = synth_image(2, 8, 8);
        let lr_up = lr.resize(16, 16, crate::image::ResampleKernel::catmull_rom()).unwrap();
        let target = codec.encode(&lr_up);
        let den = OracleDenoiser::new(target.clone(), sched.clone());
        let params = StructSrParams::default();
        let (base, _, _) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, None, 3, false).unwrap();
        let (guided, traj, report) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, Some(&params), 3, false).unwrap();
        let target_img = codec.decode(&target);
        assert!(base.max_abs_diff(&target_img) < 1e-3);
        assert!(guided.max_abs_diff(&target_img) < 1e-3);
        assert_eq!(traj.len(), 9); // round(0.3 * 30)
        assert_eq!(report.sas_decodes, 9);
        assert!(report.s_max.unwrap() > 0.99);
    }

    #[test]
    fn negative_similarity_clamps_to_noop() {
        let sched = make_schedule(20, 1e-4, 0.02).unwrap();
        let codec = IdentityCodec;
        let hr = synth_image(5, 16, 16);
        // LR is the photographic negative of what the denoiser converges to,
        // so every screened similarity is negative and the weight clamps to 0
        let neg =
            ImageBuf::new(16, 16, 3, hr.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        let lr = neg.resize(8, 8, crate::image::ResampleKernel::catmull_rom()).unwrap();
        let hr_lat = codec.encode(&hr);
        let den = OracleDenoiser::new(hr_lat, sched.clone());
        let params = StructSrParams::default();
        let (base, _, _) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, None, 7, false).unwrap();
        let (guided, _, report) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, Some(&params), 7, false).unwrap();
        assert!(report.s_max.unwrap() < 0.0);
        assert_eq!(base.data(), guided.data());
    }

    #[test]
    fn ablations_off_match_baseline() {
        let sched = make_schedule(20, 1e-4, 0.02).unwrap();
        let codec = IdentityCodec;
        let lr = synth_image(6, 8, 8);
        let target = codec.encode(
            &lr.resize(16, 16, crate::image::ResampleKernel::catmull_rom()).unwrap(),
        );
        let den = OracleDenoiser::new(target, sched.clone());
        let params = StructSrParams {
            enable_sce: false,
            enable_ide: false,
            ..Default::default()
        };
        let (base, _, _) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, None, 11, false).unwrap();
        let (guided, _, report) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, Some(&params), 11, false).unwrap();
        assert!(report.s_max.unwrap() > 0.0);
        assert!(base.max_abs_diff(&guided) < 1e-6);
    }

    #[test]
    fn diagnostics_extends_trajectory_to_every_step() {
        let sched = make_schedule(20, 1e-4, 0.02).unwrap();
        let codec = IdentityCodec;
        let lr = synth_image(8, 8, 8);
        let target = codec.encode(
            &lr.resize(16, 16, crate::image::ResampleKernel::catmull_rom()).unwrap(),
        );
        let den = OracleDenoiser::new(target, sched.clone());
        let params = StructSrParams::default();
        let (_, traj, _) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, Some(&params), 1, true).unwrap();
        assert_eq!(traj.len(), 20);
        let (_, base_traj, _) =
            run_inference(&lr, 16, 16, &den, &codec, &sched, None, 1, true).unwrap();
        assert_eq!(base_traj.len(), 20);
    }

    #[test]
    fn empty_screening_window_rejected() {
        let sched = make_schedule(10, 1e-4, 0.02).unwrap();
        let lr = synth_image(9, 8, 8);
        let den = OracleDenoiser::new(LatentImage::new(1, 1, 1, vec![0.0]).unwrap(), sched.clone());
        let params = StructSrParams { t_sas_fraction: 0.0, ..Default::default() };
        let err = run_inference(&lr, 16, 16, &den, &IdentityCodec, &sched, Some(&params), 0, false);
        assert!(err.is_err());
    }
}
