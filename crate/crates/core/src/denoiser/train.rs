//! Stage-wise training with Adam.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grad::{loss_and_grad, Loss, TrainingPair};
use super::CidStageParams;
use crate::error::{Error, Result};
use crate::image::norm2;
use crate::recon::normalize_g1;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-2,
            lr_decay: 0.99,
            batch_size: 1,
            seed: 0,
            loss: Loss::L2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedStage {
    pub params: CidStageParams,
    /// Full-dataset loss (normalized-image units) before training, then after
    /// every epoch.
    pub loss_curve: Vec<f64>,
}

/// Random unit-norm encode/decode filters and thresholds set from the
/// normalized initial image.
///
/// Every threshold equals the value ranked `⌈0.1·n⌉` from the top of the
/// sorted `g1(x_init)`, i.e. the cut-off of the 10 % largest voxels.
pub fn init_stage(
    x_init: &crate::image::Image,
    n_filters: usize,
    size: usize,
    seed: u64,
) -> Result<CidStageParams> {
    if n_filters == 0 || size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "need n_filters >= 1 and odd size (got {n_filters}, {size})"
        )));
    }
    let taps = size * size;
    let mut rng = rng::stream(seed, Purpose::FilterInit, 0);
    let bank = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let mut out = Vec::with_capacity(n_filters * taps);
        for _ in 0..n_filters {
            let mut f: Vec<f64> = (0..taps).map(|_| StandardNormal.sample(rng)).collect();
            let norm = norm2(&f);
            f.iter_mut().for_each(|v| *v /= norm);
            out.extend(f);
        }
        out
    };
    let encode = bank(&mut rng);
    let decode = bank(&mut rng);
    let alpha = top_decile_value(&normalize_g1(x_init)?.into_vec());
    CidStageParams::new(n_filters, size, encode, decode, vec![alpha.max(0.0); n_filters])
}

/// Value at rank `⌈0.1·n⌉` (1-based) from the top.
pub(crate) fn top_decile_value(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let rank = ((values.len() as f64) * 0.1).ceil().max(1.0) as usize;
    v[rank - 1]
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Initializes from the first pair's input and trains.
pub fn train_stage(
    pairs: &[TrainingPair],
    n_filters: usize,
    size: usize,
    cfg: &TrainConfig,
) -> Result<TrainedStage> {
    let first = pairs.first().ok_or_else(|| Error::invalid("no training pairs"))?;
    let init = init_stage(&first.input, n_filters, size, cfg.seed)?;
    train_stage_from(init, pairs, cfg)
}

/// Adam on the normalized-image loss, starting from `init`.
///
/// Optimization runs on images rescaled to unit mean (`n · g1(x)`) with the
/// thresholds expressed in the same units. The denoiser is positively
/// homogeneous in (image, thresholds), so this is the same problem with
/// better-scaled gradients; returned thresholds are in `g1` units.
/// Thresholds are projected onto `α ≥ 0` after every step.
pub fn train_stage_from(
    init: CidStageParams,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<TrainedStage> {
    cfg.validate()?;
    init.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let n = pairs[0].input.len() as f64;
    let scaled = pairs
        .iter()
        .map(|p| {
            p.input.same_shape(&p.reference)?;
            p.input.same_shape(&pairs[0].input)?;
            Ok(TrainingPair {
                input: normalize_g1(&p.input)?.scaled(n),
                reference: normalize_g1(&p.reference)?.scaled(n),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // Loss in scaled units is n² (or n for l1) times the g1-unit loss.
    let loss_unit = match cfg.loss {
        Loss::L2 => n * n,
        Loss::L1 => n,
    };

    let mut params = init;
    params.thresholds.iter_mut().for_each(|a| *a *= n);
    let n_enc = params.encode.len();
    let n_dec = params.decode.len();
    let mut flat: Vec<f64> = params
        .encode
        .iter()
        .chain(&params.decode)
        .chain(&params.thresholds)
        .copied()
        .collect();
    let mut adam = Adam::new(flat.len());
    let unflatten = |flat: &[f64], p: &mut CidStageParams| {
        p.encode.copy_from_slice(&flat[..n_enc]);
        p.decode.copy_from_slice(&flat[n_enc..n_enc + n_dec]);
        p.thresholds.copy_from_slice(&flat[n_enc + n_dec..]);
    };

    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    curve.push(loss_and_grad(&params, &scaled, cfg.loss)?.0 / loss_unit);
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        let mut rng = rng::stream(cfg.seed, Purpose::TrainShuffle, epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| scaled[i].clone()));
            let (_, g) = loss_and_grad(&params, &batch, cfg.loss)?;
            let gflat: Vec<f64> = g
                .encode
                .iter()
                .chain(&g.decode)
                .chain(&g.thresholds)
                .copied()
                .collect();
            adam.step(&mut flat, &gflat, lr);
            flat[n_enc + n_dec..].iter_mut().for_each(|a| *a = a.max(0.0));
            unflatten(&flat, &mut params);
        }
        curve.push(loss_and_grad(&params, &scaled, cfg.loss)?.0 / loss_unit);
    }
    params.thresholds.iter_mut().for_each(|a| *a /= n);
    Ok(TrainedStage {
        params,
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::new(n, n, (0..n * n).map(|_| rng.random::<f64>() + 0.05).collect()).unwrap()
    }

    #[test]
    fn threshold_init_is_top_decile_order_statistic() {
        // 25 voxels valued 1..=25: g1 divides by 325; rank ceil(2.5) = 3 from
        // the top is 23.
        let x = Image::new(5, 5, (1..=25).map(f64::from).collect()).unwrap();
        let p = init_stage(&x, 4, 3, 9).unwrap();
        for &a in &p.thresholds {
            assert!((a - 23.0 / 325.0).abs() < 1e-15);
        }
    }

    #[test]
    fn init_filters_have_unit_norm_and_are_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_image(10, &mut rng);
        let p = init_stage(&x, 6, 3, 17).unwrap();
        for k in 0..6 {
            assert!((norm2(p.encode_filter(k)) - 1.0).abs() < 1e-12);
            assert!((norm2(p.decode_filter(k)) - 1.0).abs() < 1e-12);
        }
        assert_eq!(p, init_stage(&x, 6, 3, 17).unwrap());
        assert_ne!(p, init_stage(&x, 6, 3, 18).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_keeps_thresholds_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<TrainingPair> = (0..3)
            .map(|_| {
                let a = random_image(10, &mut rng);
                let b = a.map(|v| 0.5 * v + 0.2);
                TrainingPair::new(a, b).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 15,
            seed: 4,
            ..Default::default()
        };
        let a = train_stage(&pairs, 4, 3, &cfg).unwrap();
        let b = train_stage(&pairs, 4, 3, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_curve, b.loss_curve);
        assert!(a.params.thresholds.iter().all(|&t| t >= 0.0));
        assert_eq!(a.loss_curve.len(), 16);
    }

    #[test]
    fn rejects_bad_config() {
        let x = Image::filled(4, 4, 1.0);
        let pairs = vec![TrainingPair::new(x.clone(), x).unwrap()];
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train_stage(&pairs, 1, 1, &cfg).is_err());
        assert!(train_stage(&[], 1, 1, &TrainConfig::default()).is_err());
    }
}
