//! Stage-wise training of the BCD-Net denoisers.
//!
//! Stage `n` is trained on pairs `(x_l⁽ⁿ⁻¹⁾, x_true,l)` where `x_l⁽ⁿ⁻¹⁾` is
//! what the network built so far produces for sample `l`. Each sample's
//! reconstruction is advanced one outer iteration after every stage, which
//! gives the same iterates as re-running the partial network from scratch.

use serde::{Deserialize, Serialize};

use crate::denoiser::{train_stage, CidModel, TrainConfig, TrainedStage, TrainingPair};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::phantom::Measurement;
use crate::projector::SystemModel;
use crate::recon::{bcd_outer_step, initial_image, BcdState, ReconConfig};
use crate::rng::{self, Purpose};

/// Denoiser architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Filters per stage (`K`).
    pub n_filters: usize,
    /// Odd filter side (`R = size²`).
    pub size: usize,
    /// Number of stages (`T`).
    pub stages: usize,
    pub train: TrainConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            n_filters: 16,
            size: 3,
            stages: 10,
            train: TrainConfig::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_filters == 0 || self.stages == 0 || self.size % 2 == 0 {
            return Err(Error::invalid(
                "denoiser needs n_filters >= 1, stages >= 1 and an odd filter size",
            ));
        }
        self.train.validate()
    }
}

/// One training measurement with its ground truth.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub measurement: Measurement,
    pub truth: Image,
}

/// Trains `den.stages` stages. `on_stage(n, stage)` is called after each
/// stage is trained (1-based `n`). Stage `n` uses the seed derived from
/// `den.train.seed` for index `n`.
pub fn train_bcdnet<A: SystemModel + ?Sized>(
    samples: &[TrainingSample],
    a: &A,
    den: &DenoiserConfig,
    recon: &ReconConfig,
    mut on_stage: impl FnMut(usize, &TrainedStage),
) -> Result<CidModel> {
    den.validate()?;
    recon.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut iterates = samples
        .iter()
        .map(|s| {
            s.truth.check_shape(a.image_shape().0, a.image_shape().1)?;
            initial_image(&s.measurement, a, recon.n_em_init)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut states = vec![BcdState::default(); samples.len()];
    let mut model = CidModel::default();

    for n in 1..=den.stages {
        let pairs = iterates
            .iter()
            .zip(samples)
            .map(|(x, s)| TrainingPair::new(x.clone(), s.truth.clone()))
            .collect::<Result<Vec<_>>>()?;
        let cfg = TrainConfig {
            seed: rng::derive_seed(den.train.seed, Purpose::StageSeed, n as u64),
            ..den.train.clone()
        };
        let trained = train_stage(&pairs, den.n_filters, den.size, &cfg)?;
        log::info!(
            "stage {n}/{}: loss {:.4e} -> {:.4e}",
            den.stages,
            trained.loss_curve.first().copied().unwrap_or(f64::NAN),
            trained.loss_curve.last().copied().unwrap_or(f64::NAN)
        );
        on_stage(n, &trained);
        if n < den.stages {
            for ((x, s), st) in iterates.iter_mut().zip(samples).zip(states.iter_mut()) {
                *x = bcd_outer_step(x, &trained.params, &s.measurement, a, recon, st)?.x;
            }
        }
        model.metadata.seeds.push(cfg.seed);
        model.metadata.loss_curves.push(trained.loss_curve.clone());
        model.stages.push(trained.params);
    }
    Ok(model)
}
