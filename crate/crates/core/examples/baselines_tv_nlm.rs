//! Runs the total-variation (PDHG) and non-local-means (ADMM) baselines and
//! prints the objective and primal/dual residual histories.

use bcdpet::config::{ExperimentConfig, Split};
use bcdpet::metrics::rmse;
use bcdpet::phantom::{make_phantom, simulate_measurement};
use bcdpet::recon::{reconstruct, Algorithm};
use bcdpet::{Geometry, Projector, Result};

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.geometry = Geometry::square(32, 48);
    cfg.test.total_net_trues = 1e5;
    cfg.recon.iterations = 300;
    cfg.recon.tv.beta = 0.25;
    cfg.recon.nlm.beta = 0.0625;
    cfg.recon.nlm.sigma_f = 0.1;
    let a = Projector::new(cfg.geometry)?;
    let spec = cfg.scenario(Split::Test);
    let (p, regions) = make_phantom(&spec.phantom, &cfg.geometry)?;
    let sim = simulate_measurement(&p, &a, &spec)?;
    let m = &sim.measurements[0];

    for alg in [Algorithm::Em, Algorithm::TvPdhg, Algorithm::NlmAdmm] {
        let rc = bcdpet::recon::ReconConfig {
            algorithm: alg,
            em_iterations: 300,
            ..cfg.recon.clone()
        };
        let (x, trace) = reconstruct(m, &a, &rc, None)?;
        let obj = &trace.objective;
        print!("{alg:>9}: rmse {:.3}, objective {:.6e} -> {:.6e}", rmse(&x, &sim.truth, &regions.fov)?, obj[0], obj[obj.len() - 1]);
        if let Some((p, d)) = trace.residuals.last() {
            print!(", residuals primal {p:.2e} dual {d:.2e}");
        }
        println!();
    }
    Ok(())
}
