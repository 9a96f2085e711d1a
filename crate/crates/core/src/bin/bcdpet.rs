use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bcdpet::config::ExperimentConfig;
use bcdpet::pipeline;
use bcdpet::recon::Algorithm;
use bcdpet::{Error, Result};

/// Low-count emission tomography: simulate, train, reconstruct, evaluate.
#[derive(Parser)]
#[command(name = "bcdpet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `out_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write phantoms, masks and noisy measurements for both scenarios.
    Simulate(Common),
    /// Train the denoiser stages on the train scenario.
    Train(Common),
    /// Reconstruct the test realizations (or one measurement file).
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "bcdnet")]
        algorithm: Algorithm,
        #[arg(long)]
        measurement: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score saved reconstructions against the test truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "bcdnet")]
        algorithm: Algorithm,
    },
    /// Sweep the regularization strength of one algorithm.
    SweepBeta {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "tv_pdhg")]
        algorithm: Algorithm,
        /// Explicit comma-separated grid, replacing the configured one.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long)]
        measurement: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn setup(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))?;
    cfg.validate()?;
    Ok((cfg, out))
}

fn show(p: &Path) {
    println!("{}", p.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let (cfg, out) = setup(&c)?;
            pipeline::cmd_simulate(&cfg, &out)?;
            show(&out.join(pipeline::MANIFEST_FILE));
        }
        Command::Train(c) => {
            let (cfg, out) = setup(&c)?;
            show(&pipeline::cmd_train(&cfg, &out)?);
        }
        Command::Reconstruct {
            common,
            algorithm,
            measurement,
            model,
        } => {
            let (cfg, out) = setup(&common)?;
            for d in pipeline::cmd_reconstruct(&cfg, &out, algorithm, measurement.as_deref(), model.as_deref())? {
                show(&d);
            }
        }
        Command::Evaluate { common, algorithm } => {
            let (cfg, out) = setup(&common)?;
            show(&pipeline::cmd_evaluate(&cfg, &out, algorithm)?);
        }
        Command::SweepBeta {
            common,
            algorithm,
            betas,
            measurement,
            model,
        } => {
            let (mut cfg, out) = setup(&common)?;
            if betas.is_some() {
                cfg.sweep.betas = betas;
            }
            show(&pipeline::cmd_sweep_beta(
                &cfg,
                &out,
                algorithm,
                measurement.as_deref(),
                model.as_deref(),
            )?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
