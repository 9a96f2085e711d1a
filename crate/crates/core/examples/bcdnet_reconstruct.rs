//! Trains a model, then reconstructs a test measurement with the unrolled
//! network and with plain EM, printing RMSE and the adaptive β per iteration.

use bcdpet::config::{ExperimentConfig, Split};
use bcdpet::metrics::{cnr, rmse};
use bcdpet::phantom::{make_phantom, simulate_measurement};
use bcdpet::recon::{reconstruct, Algorithm, ReconConfig};
use bcdpet::training::{train_bcdnet, TrainingSample};
use bcdpet::{Projector, Result};

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.denoiser.stages = 4;
    cfg.recon.iterations = 4;
    let a = Projector::new(cfg.geometry)?;

    let tr = cfg.scenario(Split::Train);
    let (p, _) = make_phantom(&tr.phantom, &cfg.geometry)?;
    let sim = simulate_measurement(&p, &a, &tr)?;
    let samples: Vec<_> = sim
        .measurements
        .into_iter()
        .map(|measurement| TrainingSample {
            measurement,
            truth: sim.truth.clone(),
        })
        .collect();
    let model = train_bcdnet(&samples, &a, &cfg.denoiser, &cfg.recon, |_, _| {})?;

    let te = cfg.scenario(Split::Test);
    let (p, regions) = make_phantom(&te.phantom, &cfg.geometry)?;
    let test = simulate_measurement(&p, &a, &te)?;
    let m = &test.measurements[0];

    let bcd = ReconConfig {
        algorithm: Algorithm::Bcdnet,
        ..cfg.recon.clone()
    };
    let (x, trace) = reconstruct(m, &a, &bcd, Some(&model))?;
    for (n, (img, beta)) in trace.snapshots.iter().zip(&trace.beta).enumerate() {
        let beta = beta.map_or("-".to_string(), |b| format!("{b:.3}"));
        println!("iter {n}: rmse {:.3}, beta {beta}", rmse(img, &test.truth, &regions.fov)?);
    }
    let em = ReconConfig {
        algorithm: Algorithm::Em,
        ..cfg.recon.clone()
    };
    let (xe, _) = reconstruct(m, &a, &em, None)?;
    println!(
        "final: bcdnet rmse {:.3} cnr {:.3} | em rmse {:.3} cnr {:.3}",
        rmse(&x, &test.truth, &regions.fov)?,
        cnr(&x, &regions)?,
        rmse(&xe, &test.truth, &regions.fov)?,
        cnr(&xe, &regions)?
    );
    Ok(())
}
