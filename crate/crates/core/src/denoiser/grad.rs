use serde::{Deserialize, Serialize};

use super::{conv_acc, conv_adjoint_acc, filter_grad_acc, shrink, CidStageParams};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::recon::normalize_g1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    L2,
    /// Absolute-error loss. Kept for comparison only: it tends to produce
    /// piecewise-constant outputs.
    L1,
}

/// A (noisy input, reference) image pair.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input: Image,
    pub reference: Image,
}

impl TrainingPair {
    pub fn new(input: Image, reference: Image) -> Result<Self> {
        input.same_shape(&reference)?;
        Ok(Self { input, reference })
    }
}

/// Gradient blocks, laid out like [`CidStageParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct CidGradient {
    pub encode: Vec<f64>,
    pub decode: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl CidGradient {
    pub fn zeros_like(p: &CidStageParams) -> Self {
        Self {
            encode: vec![0.0; p.encode.len()],
            decode: vec![0.0; p.decode.len()],
            thresholds: vec![0.0; p.thresholds.len()],
        }
    }
}

/// Loss `Σ_l ‖g1(ref_l) − CID(g1(input_l))‖²` and its gradient with respect
/// to every encode tap, decode tap and threshold.
pub fn cid_loss_and_grad(p: &CidStageParams, pairs: &[TrainingPair]) -> Result<(f64, CidGradient)> {
    let normalized = pairs
        .iter()
        .map(|pair| {
            pair.input.same_shape(&pair.reference)?;
            Ok(TrainingPair {
                input: normalize_g1(&pair.input)?,
                reference: normalize_g1(&pair.reference)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    loss_and_grad(p, &normalized, Loss::L2)
}

/// Loss and gradient on images used as given (no normalization).
///
/// The threshold derivative uses the subgradient `−sign(code)` where
/// `|code| > α` and 0 elsewhere (including `|code| = α`).
pub fn loss_and_grad(
    p: &CidStageParams,
    pairs: &[TrainingPair],
    loss: Loss,
) -> Result<(f64, CidGradient)> {
    p.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let mut grad = CidGradient::zeros_like(p);
    let mut total = 0.0;
    for pair in pairs {
        pair.input.same_shape(&pair.reference)?;
        p.check_image(pair.input.nx(), pair.input.ny())?;
        total += accumulate(p, &pair.input, &pair.reference, loss, &mut grad);
    }
    Ok((total, grad))
}

fn accumulate(
    p: &CidStageParams,
    x: &Image,
    reference: &Image,
    loss: Loss,
    grad: &mut CidGradient,
) -> f64 {
    let (nx, ny) = x.shape();
    let n = x.len();
    let k_count = p.n_filters();
    let taps = p.taps();
    let size = p.size();

    let mut codes = vec![0.0; k_count * n];
    let mut shrunk = vec![0.0; k_count * n];
    let mut u = vec![0.0; n];
    for k in 0..k_count {
        let z = &mut codes[k * n..(k + 1) * n];
        conv_acc(x.as_slice(), nx, ny, p.encode_filter(k), size, z);
        let a = p.thresholds[k];
        let t = &mut shrunk[k * n..(k + 1) * n];
        for (tv, &zv) in t.iter_mut().zip(z.iter()) {
            *tv = shrink(zv, a);
        }
        conv_acc(t, nx, ny, p.decode_filter(k), size, &mut u);
    }

    let mut value = 0.0;
    let du: Vec<f64> = u
        .iter()
        .zip(reference.as_slice())
        .map(|(&uv, &rv)| {
            let r = uv - rv;
            match loss {
                Loss::L2 => {
                    value += r * r;
                    2.0 * r
                }
                Loss::L1 => {
                    value += r.abs();
                    if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect();

    let mut dt = vec![0.0; n];
    for k in 0..k_count {
        let t = &shrunk[k * n..(k + 1) * n];
        filter_grad_acc(&du, t, nx, ny, size, &mut grad.decode[k * taps..(k + 1) * taps]);

        dt.iter_mut().for_each(|v| *v = 0.0);
        conv_adjoint_acc(&du, nx, ny, p.decode_filter(k), size, &mut dt);
        let a = p.thresholds[k];
        let z = &codes[k * n..(k + 1) * n];
        let mut d_alpha = 0.0;
        for (g, &zv) in dt.iter_mut().zip(z) {
            if zv > a {
                d_alpha -= *g;
            } else if zv < -a {
                d_alpha += *g;
            } else {
                *g = 0.0;
            }
        }
        grad.thresholds[k] += d_alpha;
        filter_grad_acc(&dt, x.as_slice(), nx, ny, size, &mut grad.encode[k * taps..(k + 1) * taps]);
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(n: usize, rng: &mut ChaCha8Rng) -> TrainingPair {
        let a = Image::new(n, n, (0..n * n).map(|_| rng.random::<f64>() + 0.1).collect()).unwrap();
        let b = Image::new(n, n, (0..n * n).map(|_| rng.random::<f64>() + 0.1).collect()).unwrap();
        TrainingPair::new(a, b).unwrap()
    }

    #[test]
    fn identity_on_equal_pair_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pr = pair(8, &mut rng);
        let same = TrainingPair::new(pr.input.clone(), pr.input.clone()).unwrap();
        let (loss, g) = cid_loss_and_grad(&CidStageParams::identity(3).unwrap(), &[same]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.encode.iter().chain(&g.decode).chain(&g.thresholds).all(|&v| v == 0.0));
    }

    #[test]
    fn empty_and_mismatched_pairs_rejected() {
        let p = CidStageParams::identity(3).unwrap();
        assert!(cid_loss_and_grad(&p, &[]).is_err());
        assert!(TrainingPair::new(Image::zeros(4, 4), Image::zeros(5, 4)).is_err());
    }

    #[test]
    fn decode_scaling_doubles_the_output() {
        // Loss is quadratic in d: with u(2d) = 2u(d), the loss at 2d equals
        // ‖2u − ref‖², and the d-gradient (linear in the residual) follows.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pr = pair(8, &mut rng);
        let k = 2;
        let enc: Vec<f64> = (0..k * 9).map(|_| rng.random::<f64>() - 0.5).collect();
        let dec: Vec<f64> = (0..k * 9).map(|_| rng.random::<f64>() - 0.5).collect();
        let p1 = CidStageParams::new(k, 3, enc.clone(), dec.clone(), vec![0.05; k]).unwrap();
        let p2 = CidStageParams::new(k, 3, enc, dec.iter().map(|v| 2.0 * v).collect(), vec![0.05; k])
            .unwrap();
        let u1 = super::super::cid_forward(&pr.input, &p1).unwrap();
        let u2 = super::super::cid_forward(&pr.input, &p2).unwrap();
        for (a, b) in u1.as_slice().iter().zip(u2.as_slice()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
        let (l2, _) = loss_and_grad(&p2, &[pr.clone()], Loss::L2).unwrap();
        let direct: f64 = u1
            .as_slice()
            .iter()
            .zip(pr.reference.as_slice())
            .map(|(u, r)| (2.0 * u - r).powi(2))
            .sum();
        assert!((l2 - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn l1_loss_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pr = pair(6, &mut rng);
        let p = CidStageParams::identity(3).unwrap();
        let (l, _) = loss_and_grad(&p, &[pr.clone()], Loss::L1).unwrap();
        let direct: f64 = pr
            .input
            .as_slice()
            .iter()
            .zip(pr.reference.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!((l - direct).abs() < 1e-12);
    }
}
