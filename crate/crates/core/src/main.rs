use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use structsr::degrade::{degrade, DegradationSpec};
use structsr::error::{Error, Result};
use structsr::harness::{run_experiment, sweep_tsas, trace, RunConfig};
use structsr::io::{read_image, write_png};
use structsr::metrics::{psnr, ssim, SsimParams};
use structsr::synth::synth_image;

#[derive(Parser)]
#[command(name = "structsr", about = "Structure-guided diffusion super-resolution harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config-file overrides shared by the experiment subcommands. Flags win
/// over file values.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of HR input images (PNG/PPM)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    output: Option<PathBuf>,
    /// Total inference timesteps
    #[arg(long)]
    timesteps: Option<usize>,
    /// Screening window as a fraction of the timesteps
    #[arg(long = "tsas-fraction")]
    tsas_fraction: Option<f64>,
    /// Comma-separated modes: baseline,structsr,wo_sce,wo_ide
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Measure the similarity trajectory at every timestep
    #[arg(long)]
    diagnostics: bool,
    /// Override any config key, e.g. --set degradation.blur_sigma=2.0
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment (baseline vs guided modes)
    Run(Overrides),
    /// Run one experiment per screening-window fraction
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated fractions, e.g. 0.1,0.3,0.5
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
    },
    /// Synthesize an LR image from an HR image
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long = "blur-sigma", default_value_t = 1.2)]
        blur_sigma: f64,
        /// JPEG quality 1..=100; omit to disable compression
        #[arg(long = "jpeg-quality")]
        jpeg_quality: Option<u8>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR/SSIM between two image files (luma)
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        distorted: PathBuf,
    },
    /// Trajectory-only diagnostic run over degradation variants
    Trace(Overrides),
    /// Generate a seeded synthetic HR corpus
    Gen {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts = key.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return;
        }
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("intermediate config keys must be tables");
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("probe table has key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn load_config(overrides: &Overrides) -> Result<RunConfig> {
    let mut table = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| Error::Read { path: path.clone(), source })?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for entry in &overrides.set {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {entry}")))?;
        set_key(&mut table, key.trim(), parse_toml_value(value.trim()));
    }
    if let Some(v) = &overrides.input {
        set_key(&mut table, "input_dir", toml::Value::String(v.display().to_string()));
    }
    if let Some(v) = &overrides.output {
        set_key(&mut table, "output_dir", toml::Value::String(v.display().to_string()));
    }
    if let Some(v) = overrides.timesteps {
        set_key(&mut table, "timesteps", toml::Value::Integer(v as i64));
    }
    if let Some(v) = overrides.tsas_fraction {
        set_key(&mut table, "t_sas_fraction", toml::Value::Float(v));
    }
    if let Some(v) = &overrides.modes {
        let modes = v.iter().map(|m| toml::Value::String(m.clone())).collect();
        set_key(&mut table, "modes", toml::Value::Array(modes));
    }
    if let Some(v) = overrides.seed {
        set_key(&mut table, "seed", toml::Value::Integer(v as i64));
    }
    if let Some(v) = overrides.jobs {
        set_key(&mut table, "jobs", toml::Value::Integer(v as i64));
    }
    if overrides.diagnostics {
        set_key(&mut table, "diagnostics", toml::Value::Boolean(true));
    }
    toml::Value::Table(table)
        .try_into::<RunConfig>()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(overrides) => {
            let config = load_config(&overrides)?;
            let report = run_experiment(&config)?;
            for agg in &report.aggregates {
                println!(
                    "{}: mean PSNR {:.3} dB, mean SSIM {:.4}",
                    agg.mode, agg.mean_psnr_db, agg.mean_ssim
                );
            }
            if !report.failures.is_empty() {
                for (id, err) in &report.failures {
                    eprintln!("failed: {id}: {err}");
                }
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { overrides, fractions } => {
            let config = load_config(&overrides)?;
            let reports = sweep_tsas(&config, &fractions)?;
            println!("wrote {} sweep reports under {}", reports.len(), config.output_dir.display());
            let partial = reports.iter().any(|r| !r.failures.is_empty());
            Ok(if partial { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Degrade { input, output, scale, blur_sigma, jpeg_quality, seed } => {
            let hr = read_image(&input)?;
            let spec = DegradationSpec { scale_factor: scale, blur_sigma, jpeg_quality };
            let lr = degrade(&hr, &spec, seed)?;
            write_png(&lr, &output)?;
            println!("{} -> {} ({}x{})", input.display(), output.display(), lr.width(), lr.height());
            Ok(ExitCode::SUCCESS)
        }
        Command::Metrics { reference, distorted } => {
            let a = read_image(&reference)?;
            let b = read_image(&distorted)?;
            let p = psnr(&b, &a)?;
            let s = ssim(&b, &a, &SsimParams::default())?;
            println!("psnr_db,{}", if p.is_infinite() { "inf".into() } else { format!("{p:.6}") });
            println!("ssim,{s:.6}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Trace(overrides) => {
            let config = load_config(&overrides)?;
            let index = trace(&config)?;
            println!("wrote trajectory bundle index to {}", index.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { output, count, size, seed } => {
            std::fs::create_dir_all(&output)
                .map_err(|source| Error::Write { path: output.clone(), source })?;
            for i in 0..count {
                let img = synth_image(seed.wrapping_add(i as u64), size, size);
                write_png(&img, &output.join(format!("img_{i:03}.png")))?;
            }
            println!("wrote {count} images to {}", output.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
