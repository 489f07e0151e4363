//! Experiment orchestration: config, corpus ingestion, baseline-vs-guided
//! runs, screening-window sweeps, and CSV/PNG report emission.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::degrade::{degrade, DegradationSpec};
use crate::diffusion::{
    detail_rms, make_schedule, Codec, Denoiser, HallucinationSpec, IdentityCodec, NoiseSchedule,
    OracleDenoiser, RestorationDenoiser, TrustCurve,
};
use crate::error::{Error, Result};
use crate::image::{ImageBuf, ResampleKernel};
use crate::infer::{run_inference, RunReport, StructSrParams};
use crate::io::{read_image, write_png};
use crate::metrics::{psnr, ssim, SsimParams, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Structsr,
    WoSce,
    WoIde,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Structsr, Mode::WoSce, Mode::WoIde];

    pub fn params(&self) -> Option<StructSrParams> {
        match self {
            Mode::Baseline => None,
            Mode::Structsr => Some(StructSrParams::default()),
            Mode::WoSce => Some(StructSrParams { enable_sce: false, ..Default::default() }),
            Mode::WoIde => Some(StructSrParams { enable_ide: false, ..Default::default() }),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Baseline => "baseline",
            Mode::Structsr => "structsr",
            Mode::WoSce => "wo_sce",
            Mode::WoIde => "wo_ide",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "structsr" => Ok(Mode::Structsr),
            "wo_sce" => Ok(Mode::WoSce),
            "wo_ide" => Ok(Mode::WoIde),
            other => Err(Error::Config(format!("unknown mode: {other}"))),
        }
    }
}

/// Denoiser selection; `Restoration` is the default stand-in backbone whose
/// late-step perturbation the guided modes are meant to suppress.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserSpec {
    /// Converges to the upscaled LR input; useful for wiring checks.
    Oracle,
    Restoration {
        #[serde(default = "default_detail_gain")]
        detail_gain: f64,
        #[serde(default = "default_detail_sigma")]
        detail_sigma: f64,
        #[serde(default = "default_trust_start")]
        trust_start: f64,
        #[serde(default = "default_trust_end")]
        trust_end: f64,
        #[serde(default = "default_trust_start_decay")]
        trust_start_decay: f64,
        #[serde(default = "default_trust_end_ramp")]
        trust_end_ramp: f64,
        #[serde(default = "default_mem_sigma")]
        mem_sigma: f64,
        /// Hallucination damping threshold as a fraction of the enhanced
        /// condition's detail-band RMS.
        #[serde(default = "default_ref_frac")]
        ref_frac: f64,
        #[serde(default = "default_damp_lo")]
        damp_lo: f64,
        #[serde(default = "default_damp_hi")]
        damp_hi: f64,
        #[serde(default = "default_a_max")]
        a_max: f64,
        #[serde(default = "default_exponent")]
        exponent: f64,
        #[serde(default = "default_band_lo")]
        band_lo: f64,
        #[serde(default = "default_band_hi")]
        band_hi: f64,
        #[serde(default = "default_noise_seed")]
        noise_seed: u64,
    },
}

fn default_detail_gain() -> f64 {
    0.35
}
fn default_detail_sigma() -> f64 {
    1.0
}
fn default_trust_start() -> f64 {
    0.9
}
fn default_trust_end() -> f64 {
    0.1
}
fn default_trust_start_decay() -> f64 {
    18.0
}
fn default_trust_end_ramp() -> f64 {
    5.0
}
fn default_mem_sigma() -> f64 {
    1.4
}
fn default_ref_frac() -> f64 {
    0.9
}
fn default_damp_lo() -> f64 {
    0.84
}
fn default_damp_hi() -> f64 {
    0.9
}
fn default_a_max() -> f64 {
    0.06
}
fn default_exponent() -> f64 {
    1.3
}
fn default_band_lo() -> f64 {
    1.2
}
fn default_band_hi() -> f64 {
    3.0
}
fn default_noise_seed() -> u64 {
    17
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::Restoration {
            detail_gain: default_detail_gain(),
            detail_sigma: default_detail_sigma(),
            trust_start: default_trust_start(),
            trust_end: default_trust_end(),
            trust_start_decay: default_trust_start_decay(),
            trust_end_ramp: default_trust_end_ramp(),
            mem_sigma: default_mem_sigma(),
            ref_frac: default_ref_frac(),
            damp_lo: default_damp_lo(),
            damp_hi: default_damp_hi(),
            a_max: default_a_max(),
            exponent: default_exponent(),
            band_lo: default_band_lo(),
            band_hi: default_band_hi(),
            noise_seed: default_noise_seed(),
        }
    }
}

impl DenoiserSpec {
    /// Build the denoiser for one image. The hallucination field seed is
    /// mixed with the per-image seed so images differ while modes share it.
    pub fn build(
        &self,
        lr: &ImageBuf,
        out_w: usize,
        out_h: usize,
        codec: &dyn Codec,
        sched: &NoiseSchedule,
        image_seed: u64,
    ) -> Result<Box<dyn Denoiser + Sync + Send>> {
        match self {
            DenoiserSpec::Oracle => {
                let up = lr.resize(out_w, out_h, ResampleKernel::catmull_rom())?;
                Ok(Box::new(OracleDenoiser::new(codec.encode(&up), sched.clone())))
            }
            DenoiserSpec::Restoration {
                detail_gain,
                detail_sigma,
                trust_start,
                trust_end,
                trust_start_decay,
                trust_end_ramp,
                mem_sigma,
                ref_frac,
                damp_lo,
                damp_hi,
                a_max,
                exponent,
                band_lo,
                band_hi,
                noise_seed,
            } => {
                let halluc = HallucinationSpec {
                    a_max: *a_max,
                    exponent: *exponent,
                    band_lo: *band_lo,
                    band_hi: *band_hi,
                    seed: noise_seed ^ image_seed,
                };
                let trust = TrustCurve {
                    start: *trust_start,
                    end: *trust_end,
                    start_decay: *trust_start_decay,
                    end_ramp: *trust_end_ramp,
                };
                let up = lr.resize(out_w, out_h, ResampleKernel::catmull_rom())?;
                let cond_lr = codec.encode(&up);
                // fully damped once the condition carries the detail level
                // the enhancer itself would produce
                let detail_ref =
                    ref_frac * (1.0 + detail_gain) * detail_rms(&cond_lr, *detail_sigma);
                Ok(Box::new(RestorationDenoiser::new(
                    *detail_gain,
                    *detail_sigma,
                    detail_ref,
                    *damp_lo,
                    *damp_hi,
                    trust,
                    *mem_sigma,
                    halluc,
                    sched.clone(),
                )?))
            }
        }
    }
}

fn default_timesteps() -> usize {
    200
}
fn default_t_sas_fraction() -> f64 {
    0.3
}
fn default_modes() -> Vec<Mode> {
    vec![Mode::Baseline, Mode::Structsr]
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.02
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default = "default_t_sas_fraction")]
    pub t_sas_fraction: f64,
    #[serde(default)]
    pub degradation: DegradationSpec,
    #[serde(default)]
    pub denoiser: DenoiserSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default)]
    pub crop: Option<usize>,
    /// 0 = use all available parallelism.
    #[serde(default)]
    pub jobs: usize,
    /// Write runtime_ms as 0 so report files are byte-reproducible.
    #[serde(default)]
    pub redact_runtime: bool,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 2 {
            return Err(Error::Config("timesteps must be >= 2".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("modes must be non-empty".into()));
        }
        self.degradation.validate()?;
        Ok(())
    }

    fn structsr_params(&self, mode: Mode) -> Option<StructSrParams> {
        mode.params().map(|p| StructSrParams { t_sas_fraction: self.t_sas_fraction, ..p })
    }
}

pub struct Corpus {
    pub images: Vec<(String, ImageBuf)>,
    pub skipped: usize,
}

/// Load every readable PNG/PPM in lexicographic filename order, applying the
/// optional center crop. Unreadable files are skipped and counted.
pub fn ingest(dir: &Path, crop: Option<usize>) -> Result<Corpus> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| Error::Read { path: dir.into(), source })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut skipped = 0usize;
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let loaded = read_image(&path).and_then(|img| match crop {
            Some(size) => img.center_crop(size),
            None => Ok(img),
        });
        match loaded {
            Ok(img) => images.push((id, img)),
            Err(err) => {
                eprintln!("warning: skipping {}: {err}", path.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::Config(format!("no readable images in {}", dir.display())));
    }
    Ok(Corpus { images, skipped })
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub image: String,
    pub mode: Mode,
    pub psnr_db: f64,
    pub ssim: f64,
    pub s_max: Option<f64>,
    pub capture_t: Option<usize>,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub mode: Mode,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// Relative improvement vs the baseline mode, percent; None when no
    /// baseline rows exist.
    pub psnr_gain_pct: Option<f64>,
    pub ssim_gain_pct: Option<f64>,
}

#[derive(Debug, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn mean(&self, mode: Mode) -> Option<(f64, f64)> {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.mode == mode).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        ))
    }

    fn compute_aggregates(&mut self) {
        let base = self.mean(Mode::Baseline);
        let mut modes: Vec<Mode> = self.rows.iter().map(|r| r.mode).collect();
        modes.sort();
        modes.dedup();
        self.aggregates = modes
            .into_iter()
            .filter_map(|mode| {
                self.mean(mode).map(|(p, s)| AggregateRow {
                    mode,
                    mean_psnr_db: p,
                    mean_ssim: s,
                    psnr_gain_pct: base.map(|(bp, _)| (p - bp) / bp * 100.0),
                    ssim_gain_pct: base.map(|(_, bs)| (s - bs) / bs * 100.0),
                })
            })
            .collect();
    }

    pub fn report_csv(&self) -> String {
        let mut out = String::from("image,mode,psnr_db,ssim,s_max,capture_t,runtime_ms\n");
        for r in &self.rows {
            let s_max = r.s_max.map(|v| format!("{v:.6}")).unwrap_or_default();
            let capture = r.capture_t.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.6},{},{},{:.3}\n",
                r.image,
                r.mode,
                fmt_db(r.psnr_db),
                r.ssim,
                s_max,
                capture,
                r.runtime_ms
            ));
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("mode,mean_psnr_db,mean_ssim,psnr_gain_pct,ssim_gain_pct\n");
        for a in &self.aggregates {
            let gp = a.psnr_gain_pct.map(|v| format!("{v:.4}")).unwrap_or_default();
            let gs = a.ssim_gain_pct.map(|v| format!("{v:.4}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.6},{},{}\n",
                a.mode,
                fmt_db(a.mean_psnr_db),
                a.mean_ssim,
                gp,
                gs
            ));
        }
        out
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

struct ImageOutcome {
    rows: Vec<ReportRow>,
    trajectories: Vec<(String, Trajectory)>,
    outputs: Vec<(String, ImageBuf)>,
}

fn process_image(
    config: &RunConfig,
    sched: &NoiseSchedule,
    id: &str,
    hr: &ImageBuf,
    image_seed: u64,
) -> Result<ImageOutcome> {
    let codec = IdentityCodec;
    let lr = degrade(hr, &config.degradation, image_seed)?;
    let (out_w, out_h) = (hr.width(), hr.height());
    let denoiser = config.denoiser.build(&lr, out_w, out_h, &codec, sched, image_seed)?;
    let ssim_params = SsimParams::default();
    let mut outcome = ImageOutcome {
        rows: Vec::new(),
        trajectories: Vec::new(),
        outputs: Vec::new(),
    };
    for &mode in &config.modes {
        let params = config.structsr_params(mode);
        let (out, traj, report): (ImageBuf, Trajectory, RunReport) = run_inference(
            &lr,
            out_w,
            out_h,
            denoiser.as_ref(),
            &codec,
            sched,
            params.as_ref(),
            image_seed,
            config.diagnostics,
        )?;
        let row = ReportRow {
            image: id.to_string(),
            mode,
            psnr_db: psnr(&out, hr)?,
            ssim: ssim(&out, hr, &ssim_params)?,
            s_max: report.s_max,
            capture_t: report.capture_t,
            runtime_ms: if config.redact_runtime { 0.0 } else { report.wall_ms },
        };
        outcome.rows.push(row);
        if !traj.is_empty() {
            outcome.trajectories.push((format!("{id}_{mode}"), traj));
        }
        outcome.outputs.push((format!("{id}_{mode}"), out));
    }
    Ok(outcome)
}

/// Degrade each HR image, run every configured mode with a shared per-image
/// seed, score against the ground truth, and write images, trajectories, and
/// the report CSVs under `output_dir`.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let corpus = ingest(&config.input_dir, config.crop)?;
    fs::create_dir_all(&config.output_dir)
        .map_err(|source| Error::Write { path: config.output_dir.clone(), source })?;
    let sched = make_schedule(config.timesteps, config.beta_start, config.beta_end)?;

    let work = |(index, (id, hr)): (usize, &(String, ImageBuf))| {
        let image_seed = config.seed.wrapping_add(index as u64);
        (id.clone(), process_image(config, &sched, id, hr, image_seed))
    };
    let outcomes: Vec<(String, Result<ImageOutcome>)> = if config.jobs == 1 {
        corpus.images.iter().enumerate().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| corpus.images.par_iter().enumerate().map(work).collect())
    };

    let mut report = ExperimentReport::default();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                for (name, img) in &o.outputs {
                    write_png(img, &config.output_dir.join(format!("{name}.png")))?;
                }
                for (name, traj) in &o.trajectories {
                    let path = config.output_dir.join(format!("traj_{name}.csv"));
                    let mut buf = Vec::new();
                    traj.write_csv(&mut buf)?;
                    fs::write(&path, buf).map_err(|source| Error::Write { path, source })?;
                }
                report.rows.extend(o.rows);
            }
            Err(err) => report.failures.push((id, err.to_string())),
        }
    }
    report.rows.sort_by(|a, b| (&a.image, a.mode).cmp(&(&b.image, b.mode)));
    report.compute_aggregates();

    let path = config.output_dir.join("report.csv");
    fs::write(&path, report.report_csv()).map_err(|source| Error::Write { path, source })?;
    let path = config.output_dir.join("aggregate.csv");
    fs::write(&path, report.aggregate_csv()).map_err(|source| Error::Write { path, source })?;
    Ok(report)
}

/// One experiment per screening-window fraction, all sharing seeds, plus a
/// combined CSV with the per-fraction means and the SSIM-best fraction.
pub fn sweep_tsas(config: &RunConfig, fractions: &[f64]) -> Result<Vec<ExperimentReport>> {
    if fractions.is_empty() {
        return Err(Error::Config("sweep needs at least one fraction".into()));
    }
    if fractions.iter().any(|f| !(0.05..=0.9).contains(f)) {
        return Err(Error::Config("sweep fractions must lie in [0.05, 0.9]".into()));
    }
    let mut reports = Vec::new();
    let mut summary = BTreeMap::new();
    for &fraction in fractions {
        let mut sub = config.clone();
        sub.t_sas_fraction = fraction;
        sub.output_dir = config.output_dir.join(format!("tsas_{fraction:.2}"));
        let report = run_experiment(&sub)?;
        if let Some((p, s)) = report.mean(Mode::Structsr) {
            summary.insert(format!("{fraction:.2}"), (p, s));
        }
        reports.push(report);
    }
    fs::create_dir_all(&config.output_dir)
        .map_err(|source| Error::Write { path: config.output_dir.clone(), source })?;
    let mut csv = String::from("fraction,mean_psnr_db,mean_ssim\n");
    let mut best: Option<(&str, f64)> = None;
    for (fraction, (p, s)) in &summary {
        csv.push_str(&format!("{fraction},{},{s:.6}\n", fmt_db(*p)));
        if best.map_or(true, |(_, bs)| *s > bs) {
            best = Some((fraction, *s));
        }
    }
    if let Some((fraction, _)) = best {
        csv.push_str(&format!("best_fraction,{fraction}\n"));
    }
    let path = config.output_dir.join("sweep.csv");
    fs::write(&path, csv).map_err(|source| Error::Write { path, source })?;
    Ok(reports)
}

/// Write one `t,ssim` CSV per run plus an index file mapping run ids to
/// their labels (typically degradation specs). Returns the index path.
pub fn emit_trajectory_bundle(runs: &[(String, Trajectory)], out: &Path) -> Result<PathBuf> {
    if runs.is_empty() {
        return Err(Error::Config("trajectory bundle needs at least one run".into()));
    }
    fs::create_dir_all(out).map_err(|source| Error::Write { path: out.into(), source })?;
    let mut index = String::from("run,label\n");
    for (i, (label, traj)) in runs.iter().enumerate() {
        let name = format!("traj_run{i}.csv");
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        let path = out.join(&name);
        fs::write(&path, buf).map_err(|source| Error::Write { path, source })?;
        index.push_str(&format!("{name},{label}\n"));
    }
    let index_path = out.join("index.csv");
    fs::write(&index_path, index)
        .map_err(|source| Error::Write { path: index_path.clone(), source })?;
    Ok(index_path)
}

/// Trajectory-only diagnostic run over degradation variants of the config
/// spec (downsample only, +blur, +compression), one bundle per first image.
pub fn trace(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    let corpus = ingest(&config.input_dir, config.crop)?;
    let (id, hr) = &corpus.images[0];
    let sched = make_schedule(config.timesteps, config.beta_start, config.beta_end)?;
    let codec = IdentityCodec;
    let base = &config.degradation;
    let variants = [
        DegradationSpec { scale_factor: base.scale_factor, blur_sigma: 0.0, jpeg_quality: None },
        DegradationSpec {
            scale_factor: base.scale_factor,
            blur_sigma: base.blur_sigma,
            jpeg_quality: None,
        },
        base.clone(),
    ];
    let mut runs = Vec::new();
    for spec in &variants {
        let lr = degrade(hr, spec, config.seed)?;
        let denoiser =
            config.denoiser.build(&lr, hr.width(), hr.height(), &codec, &sched, config.seed)?;
        for &mode in &[Mode::Baseline, Mode::Structsr] {
            let params = config.structsr_params(mode);
            let (_, traj, _) = run_inference(
                &lr,
                hr.width(),
                hr.height(),
                denoiser.as_ref(),
                &codec,
                &sched,
                params.as_ref(),
                config.seed,
                true,
            )?;
            runs.push((format!("{id} {} {mode}", spec.label()), traj));
        }
    }
    emit_trajectory_bundle(&runs, &config.output_dir)
}
