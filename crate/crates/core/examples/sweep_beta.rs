//! Full command pipeline in a temp directory: simulate, then sweep the TV
//! regularization strength and print the resulting table.

use bcdpet::config::ExperimentConfig;
use bcdpet::pipeline::{cmd_simulate, cmd_sweep_beta};
use bcdpet::recon::Algorithm;
use bcdpet::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.recon.iterations = 40;
    cfg.sweep.min_exponent = -6;
    cfg.sweep.max_exponent = 2;
    let out = std::env::temp_dir().join("bcdpet_example_sweep");
    cmd_simulate(&cfg, &out)?;
    let csv = cmd_sweep_beta(&cfg, &out, Algorithm::TvPdhg, None, None)?;
    print!("{}", std::fs::read_to_string(&csv).map_err(|e| bcdpet::Error::Config(e.to_string()))?);
    Ok(())
}
