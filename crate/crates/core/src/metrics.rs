//! Full-reference quality metrics: windowed SSIM, PSNR on luma, and the
//! per-timestep structural similarity used for screening, plus the recorded
//! trajectory of those values.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::image::{gaussian_taps, ImageBuf, ResampleKernel};

#[derive(Debug, Clone, PartialEq)]
pub enum SsimWindow {
    /// Gaussian-weighted window, the Wang et al. 2004 convention.
    Gaussian { sigma: f64, size: usize },
    /// Uniform window; with `size` equal to the image dimensions this is the
    /// single-window global statistic.
    Uniform { size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    pub window: SsimWindow,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    /// 11x11 Gaussian (sigma 1.5), c1 = (0.01)^2 and c2 = (0.03)^2 on unit
    /// dynamic range.
    fn default() -> Self {
        Self {
            window: SsimWindow::Gaussian { sigma: 1.5, size: 11 },
            c1: 0.01f64 * 0.01,
            c2: 0.03f64 * 0.03,
        }
    }
}

impl SsimParams {
    fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0) || !(self.c2 > 0.0) {
            return Err(Error::param("SSIM constants must be > 0"));
        }
        let size = match self.window {
            SsimWindow::Gaussian { sigma, size } => {
                if !(sigma > 0.0) {
                    return Err(Error::param("SSIM window sigma must be > 0"));
                }
                size
            }
            SsimWindow::Uniform { size } => size,
        };
        if size == 0 || size % 2 == 0 {
            return Err(Error::param(format!("SSIM window size {size} must be odd")));
        }
        Ok(())
    }

    /// Normalized 1-D window taps (the 2-D window is their outer product).
    pub fn taps(&self) -> Vec<f64> {
        match self.window {
            SsimWindow::Gaussian { sigma, size } => {
                let full = gaussian_taps(sigma);
                let radius = full.len() / 2;
                let half = size / 2;
                let mut taps: Vec<f64> = if half <= radius {
                    full[radius - half..=radius + half].to_vec()
                } else {
                    // requested window wider than ceil(3 sigma) support
                    let mut t = vec![0.0; size];
                    t[half - radius..=half + radius].copy_from_slice(&full);
                    t
                };
                let sum: f64 = taps.iter().sum();
                for t in &mut taps {
                    *t /= sum;
                }
                taps
            }
            SsimWindow::Uniform { size } => vec![1.0 / size as f64; size],
        }
    }
}

/// Separable weighted filtering over fully-contained windows ("valid" mode).
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut mid = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            mid[y * ow + x] = taps.iter().enumerate().map(|(i, &t)| t * row[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, &t)| t * mid[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all window positions, computed on luma.
pub fn ssim(x: &ImageBuf, y: &ImageBuf, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if x.width() != y.width() || x.height() != y.height() {
        return Err(Error::shape(format!(
            "ssim operands {}x{} vs {}x{}",
            x.width(),
            y.width(),
            x.height(),
            y.height()
        )));
    }
    let xl = x.to_luma();
    let yl = y.to_luma();
    let (w, h) = (xl.width(), xl.height());
    let taps = params.taps();
    let k = taps.len();
    if w < k || h < k {
        return Err(Error::param(format!("image {w}x{h} smaller than SSIM window {k}")));
    }

    let xp = xl.plane(0);
    let yp = yl.plane(0);
    let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xp.iter().zip(yp).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(xp, w, h, &taps);
    let mu_y = filter_valid(yp, w, h, &taps);
    let m_xx = filter_valid(&xx, w, h, &taps);
    let m_yy = filter_valid(&yy, w, h, &taps);
    let m_xy = filter_valid(&xy, w, h, &taps);

    let (c1, c2) = (params.c1, params.c2);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    Ok(acc / mu_x.len() as f64)
}

/// Y-channel PSNR in dB on unit dynamic range; identical images give +inf.
pub fn psnr(x: &ImageBuf, y: &ImageBuf) -> Result<f64> {
    if x.width() != y.width() || x.height() != y.height() {
        return Err(Error::shape("psnr operands differ in size"));
    }
    let xl = x.to_luma();
    let yl = y.to_luma();
    let n = xl.data().len();
    let mse: f64 = xl
        .data()
        .iter()
        .zip(yl.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Structural similarity of a reconstruction against the bicubically
/// upscaled LR input.
pub fn s_t(recon: &ImageBuf, lr: &ImageBuf, params: &SsimParams) -> Result<f64> {
    let sr = lr.resize(recon.width(), recon.height(), ResampleKernel::catmull_rom())?;
    ssim(recon, &sr, params)
}

/// Per-timestep similarity record; inference runs T down to 0, so timesteps
/// are strictly decreasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: usize, s: f64) -> Result<()> {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("trajectory entry at t = {t}")));
        }
        if let Some(&(last, _)) = self.entries.last() {
            if t >= last {
                return Err(Error::param(format!(
                    "trajectory timesteps must be strictly decreasing ({t} after {last})"
                )));
            }
        }
        self.entries.push((t, s));
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// (timestep, value) of the maximum entry. Ties go to the later
    /// inference step, i.e. the row recorded last.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &(t, s) in &self.entries {
            match best {
                Some((_, bs)) if s < bs => {}
                _ => best = Some((t, s)),
            }
        }
        best
    }

    pub fn final_value(&self) -> Option<f64> {
        self.entries.last().map(|&(_, s)| s)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,ssim")?;
        for &(t, s) in &self.entries {
            writeln!(out, "{t},{s:.12}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut traj = Trajectory::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "t,ssim" {
                    return Err(Error::param(format!("bad trajectory header: {line}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (t, s) = line
                .split_once(',')
                .ok_or_else(|| Error::param(format!("bad trajectory row: {line}")))?;
            let t: usize = t.trim().parse().map_err(|_| Error::param(format!("bad t: {t}")))?;
            let s: f64 = s.trim().parse().map_err(|_| Error::param(format!("bad ssim: {s}")))?;
            traj.push(t, s)?;
        }
        Ok(traj)
    }
}
