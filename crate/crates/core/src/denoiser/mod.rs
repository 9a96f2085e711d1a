//! Convolutional image denoiser: encode filters, soft thresholding, decode
//! filters, summed over the filter bank.
//!
//! Convolutions produce same-size output with zero padding. With `h = size/2`
//! and tap offsets `(dy, dx) ∈ [-h, h]²`,
//!
//! ```text
//! (c * x)[iy, ix] = Σ c[dy, dx] · x[iy - dy, ix - dx]
//! ```
//!
//! whose adjoint is the same sum with `+dy, +dx`, i.e. convolution with the
//! filter rotated by 180°.

mod grad;
mod model;
mod train;

pub use grad::{cid_loss_and_grad, loss_and_grad, CidGradient, Loss, TrainingPair};
pub use model::{load_model, save_model, CidModel, TrainingMetadata, MODEL_MAGIC, MODEL_VERSION};
pub use train::{init_stage, train_stage, train_stage_from, TrainConfig, TrainedStage};

use crate::error::{Error, Result};
use crate::image::Image;

/// `sign(t_j) · max(|t_j| − q, 0)` elementwise.
pub fn soft_threshold(t: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(q >= 0.0) {
        return Err(Error::invalid(format!("threshold must be nonnegative (got {q})")));
    }
    Ok(t.iter().map(|&v| shrink(v, q)).collect())
}

#[inline]
pub(crate) fn shrink(v: f64, q: f64) -> f64 {
    if v > q {
        v - q
    } else if v < -q {
        v + q
    } else {
        0.0
    }
}

/// Parameters of one denoiser stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CidStageParams {
    n_filters: usize,
    size: usize,
    /// `n_filters × size²` encode taps, filter-major, row-major within a filter.
    pub encode: Vec<f64>,
    /// `n_filters × size²` decode taps.
    pub decode: Vec<f64>,
    /// One nonnegative threshold per filter.
    pub thresholds: Vec<f64>,
}

impl CidStageParams {
    pub fn new(
        n_filters: usize,
        size: usize,
        encode: Vec<f64>,
        decode: Vec<f64>,
        thresholds: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            n_filters,
            size,
            encode,
            decode,
            thresholds,
        };
        p.validate()?;
        Ok(p)
    }

    /// `K = 1`, unit-impulse encode and decode filters, zero threshold: the
    /// identity map.
    pub fn identity(size: usize) -> Result<Self> {
        let taps = size * size;
        let mut impulse = vec![0.0; taps];
        impulse[taps / 2] = 1.0;
        Self::new(1, size, impulse.clone(), impulse, vec![0.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_filters == 0 {
            return Err(Error::invalid("filter count must be >= 1"));
        }
        if self.size == 0 || self.size % 2 == 0 {
            return Err(Error::invalid(format!("filter size must be odd (got {})", self.size)));
        }
        let n = self.n_filters * self.taps();
        if self.encode.len() != n || self.decode.len() != n || self.thresholds.len() != self.n_filters {
            return Err(Error::mismatch(
                format!("{n} taps per bank and {} thresholds", self.n_filters),
                format!(
                    "{} encode, {} decode, {} thresholds",
                    self.encode.len(),
                    self.decode.len(),
                    self.thresholds.len()
                ),
            ));
        }
        if self.thresholds.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::invalid("thresholds must be nonnegative"));
        }
        Ok(())
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    /// Side length of the square filter support.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Taps per filter, `size²`.
    pub fn taps(&self) -> usize {
        self.size * self.size
    }

    pub fn encode_filter(&self, k: usize) -> &[f64] {
        &self.encode[k * self.taps()..(k + 1) * self.taps()]
    }

    pub fn decode_filter(&self, k: usize) -> &[f64] {
        &self.decode[k * self.taps()..(k + 1) * self.taps()]
    }

    pub fn check_image(&self, nx: usize, ny: usize) -> Result<()> {
        if self.size > nx || self.size > ny {
            return Err(Error::invalid(format!(
                "filter support {0}x{0} is larger than the {nx}x{ny} image",
                self.size
            )));
        }
        Ok(())
    }
}

/// Rotates a square filter by 180°.
pub fn flip_filter(f: &[f64]) -> Vec<f64> {
    f.iter().rev().copied().collect()
}

/// Valid output range for a shift `d`: indices `i` with `0 <= i - d < n`.
#[inline]
fn shifted_range(n: usize, d: isize) -> std::ops::Range<usize> {
    let lo = d.max(0) as usize;
    let hi = (n as isize + d).min(n as isize).max(0) as usize;
    lo..hi.max(lo)
}

/// `out += filt * x` (same size, zero padding).
pub(crate) fn conv_acc(x: &[f64], nx: usize, ny: usize, filt: &[f64], size: usize, out: &mut [f64]) {
    let h = (size / 2) as isize;
    for (t, &w) in filt.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let dy = (t / size) as isize - h;
        let dx = (t % size) as isize - h;
        let xr = shifted_range(nx, dx);
        for iy in shifted_range(ny, dy) {
            let src = (iy as isize - dy) as usize * nx;
            let dst = iy * nx;
            for ix in xr.clone() {
                out[dst + ix] += w * x[src + (ix as isize - dx) as usize];
            }
        }
    }
}

/// `out += filtᵀ y`, the adjoint of [`conv_acc`].
pub(crate) fn conv_adjoint_acc(
    y: &[f64],
    nx: usize,
    ny: usize,
    filt: &[f64],
    size: usize,
    out: &mut [f64],
) {
    let h = (size / 2) as isize;
    for (t, &w) in filt.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let dy = (t / size) as isize - h;
        let dx = (t % size) as isize - h;
        let xr = shifted_range(nx, dx);
        for iy in shifted_range(ny, dy) {
            let src = (iy as isize - dy) as usize * nx;
            let dst = iy * nx;
            for ix in xr.clone() {
                out[src + (ix as isize - dx) as usize] += w * y[dst + ix];
            }
        }
    }
}

/// `grad[t] += Σ_p g[p] · x[p − offset(t)]`: derivative of `⟨g, filt * x⟩`
/// with respect to the filter taps.
pub(crate) fn filter_grad_acc(
    g: &[f64],
    x: &[f64],
    nx: usize,
    ny: usize,
    size: usize,
    grad: &mut [f64],
) {
    let h = (size / 2) as isize;
    for (t, gt) in grad.iter_mut().enumerate() {
        let dy = (t / size) as isize - h;
        let dx = (t % size) as isize - h;
        let xr = shifted_range(nx, dx);
        let mut acc = 0.0;
        for iy in shifted_range(ny, dy) {
            let src = (iy as isize - dy) as usize * nx;
            let dst = iy * nx;
            for ix in xr.clone() {
                acc += g[dst + ix] * x[src + (ix as isize - dx) as usize];
            }
        }
        *gt += acc;
    }
}

/// Same-size zero-padded convolution of an image with one filter.
pub fn convolve(x: &Image, filt: &[f64], size: usize) -> Image {
    let mut out = vec![0.0; x.len()];
    conv_acc(x.as_slice(), x.nx(), x.ny(), filt, size, &mut out);
    Image::new(x.nx(), x.ny(), out).unwrap()
}

/// `u = Σ_k d_k * T(c_k * x, α_k)`.
pub fn cid_forward(x: &Image, p: &CidStageParams) -> Result<Image> {
    p.validate()?;
    p.check_image(x.nx(), x.ny())?;
    let (nx, ny) = x.shape();
    let n = x.len();
    let mut u = vec![0.0; n];
    let mut code = vec![0.0; n];
    for k in 0..p.n_filters() {
        code.iter_mut().for_each(|v| *v = 0.0);
        conv_acc(x.as_slice(), nx, ny, p.encode_filter(k), p.size(), &mut code);
        let a = p.thresholds[k];
        code.iter_mut().for_each(|v| *v = shrink(*v, a));
        conv_acc(&code, nx, ny, p.decode_filter(k), p.size(), &mut u);
    }
    Image::new(nx, ny, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::new(n, n, (0..n * n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[3.0, -3.0, 0.5], 1.0).unwrap(), vec![2.0, -2.0, 0.0]);
        let t = [1.5, -0.25, 0.0, 7.0];
        assert_eq!(soft_threshold(&t, 0.0).unwrap(), t.to_vec());
        assert!(soft_threshold(&t, -1.0).is_err());
    }

    #[test]
    fn identity_configuration_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(9, &mut rng);
        for size in [1, 3, 5] {
            let u = cid_forward(&x, &CidStageParams::identity(size).unwrap()).unwrap();
            assert_eq!(u, x);
        }
    }

    #[test]
    fn full_thresholding_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(8, &mut rng);
        let k = 3;
        let encode: Vec<f64> = (0..k * 9).map(|_| rng.random::<f64>() - 0.5).collect();
        let decode: Vec<f64> = (0..k * 9).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut thresholds = vec![0.0; k];
        for (i, t) in thresholds.iter_mut().enumerate() {
            let c = convolve(&x, &encode[i * 9..(i + 1) * 9], 3);
            *t = c.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
        let p = CidStageParams::new(k, 3, encode, decode, thresholds).unwrap();
        let u = cid_forward(&x, &p).unwrap();
        assert!(u.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (nx, ny) = (7, 5);
        for size in [1, 3, 5] {
            let x: Vec<f64> = (0..nx * ny).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..nx * ny).map(|_| rng.random::<f64>() - 0.5).collect();
            let f: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut cx = vec![0.0; nx * ny];
            conv_acc(&x, nx, ny, &f, size, &mut cx);
            let mut cty = vec![0.0; nx * ny];
            conv_adjoint_acc(&y, nx, ny, &f, size, &mut cty);
            assert!((dot(&cx, &y) - dot(&x, &cty)).abs() < 1e-12);
            // The adjoint is convolution with the rotated filter.
            let mut flipped = vec![0.0; nx * ny];
            conv_acc(&y, nx, ny, &flip_filter(&f), size, &mut flipped);
            for (a, b) in cty.iter().zip(&flipped) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_image(6, &mut rng);
        let f: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let got = convolve(&x, &f, 3);
        for iy in 0..6i64 {
            for ix in 0..6i64 {
                let mut s = 0.0;
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (sy, sx) = (iy - dy, ix - dx);
                        if (0..6).contains(&sy) && (0..6).contains(&sx) {
                            s += f[((dy + 1) * 3 + dx + 1) as usize] * x.get(sx as usize, sy as usize);
                        }
                    }
                }
                assert!((s - got.get(ix as usize, iy as usize)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn filter_larger_than_image_rejected() {
        let x = Image::zeros(2, 2);
        assert!(cid_forward(&x, &CidStageParams::identity(3).unwrap()).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(CidStageParams::new(1, 2, vec![0.0; 4], vec![0.0; 4], vec![0.0]).is_err());
        assert!(CidStageParams::new(1, 3, vec![0.0; 9], vec![0.0; 9], vec![-0.1]).is_err());
        assert!(CidStageParams::new(2, 3, vec![0.0; 9], vec![0.0; 18], vec![0.0; 2]).is_err());
    }
}
