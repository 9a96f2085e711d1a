//! Draws noisy low-count measurements with a high random fraction and
//! reports the achieved count statistics.

use bcdpet::config::{ExperimentConfig, Split};
use bcdpet::phantom::{make_phantom, simulate_measurement};
use bcdpet::{Projector, Result};

fn main() -> Result<()> {
    let cfg = ExperimentConfig::quick();
    let a = Projector::new(cfg.geometry)?;
    for split in [Split::Train, Split::Test] {
        let spec = cfg.scenario(split);
        let (phantom, regions) = make_phantom(&spec.phantom, &cfg.geometry)?;
        let sim = simulate_measurement(&phantom, &a, &spec)?;
        println!(
            "{}: trues {:.0}, expected randoms {:.0}, {} hot region(s), {} cold voxels",
            split.name(),
            sim.trues_mean.sum(),
            spec.total_randoms(),
            regions.hot.len(),
            regions.cold.len()
        );
        for (m, meas) in sim.measurements.iter().enumerate() {
            let total: u64 = meas.y.iter().sum();
            let rf = meas.r_bar.iter().sum::<f64>() / total as f64;
            println!("  realization {m}: {total} counts, empirical random fraction {rf:.3}");
        }
    }
    Ok(())
}
