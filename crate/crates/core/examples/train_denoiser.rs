//! Trains a small stage-wise denoiser model and saves it to a temp file.

use bcdpet::config::{ExperimentConfig, Split};
use bcdpet::denoiser::{load_model, save_model};
use bcdpet::phantom::{make_phantom, simulate_measurement};
use bcdpet::training::{train_bcdnet, TrainingSample};
use bcdpet::{Projector, Result};

fn main() -> Result<()> {
    let cfg = ExperimentConfig::quick();
    let a = Projector::new(cfg.geometry)?;
    let spec = cfg.scenario(Split::Train);
    let (phantom, _) = make_phantom(&spec.phantom, &cfg.geometry)?;
    let sim = simulate_measurement(&phantom, &a, &spec)?;
    let samples: Vec<_> = sim
        .measurements
        .into_iter()
        .map(|measurement| TrainingSample {
            measurement,
            truth: sim.truth.clone(),
        })
        .collect();

    let model = train_bcdnet(&samples, &a, &cfg.denoiser, &cfg.recon, |n, st| {
        let first = st.loss_curve.first().copied().unwrap_or(f64::NAN);
        let last = st.loss_curve.last().copied().unwrap_or(f64::NAN);
        println!("stage {n}: loss {first:.4e} -> {last:.4e}");
    })?;

    let path = std::env::temp_dir().join("bcdpet_example_model.bcdm");
    save_model(&model, &path)?;
    let back = load_model(&path)?;
    // The file holds the filters and thresholds; training metadata stays in memory.
    assert_eq!(back.stages, model.stages);
    println!("{} stages saved to {}", model.n_stages(), path.display());
    Ok(())
}
