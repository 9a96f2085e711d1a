//! Poisson likelihood, MLEM, and the closed-form MAP-EM update.

use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};
use crate::phantom::Measurement;
use crate::projector::SystemModel;

/// Mean measurement `ȳ(x) = A x + r̄`.
pub fn mean_measurement<A: SystemModel + ?Sized>(x: &Image, m: &Measurement, a: &A) -> Result<Vec<f64>> {
    m.check_model(a)?;
    let ax = a.forward(x)?;
    Ok(ax.as_slice().iter().zip(&m.r_bar).map(|(p, r)| p + r).collect())
}

fn check_nonnegative(x: &Image) -> Result<()> {
    if x.as_slice().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("image must be nonnegative"));
    }
    Ok(())
}

fn nll_from_mean(ybar: &[f64], m: &Measurement) -> Result<f64> {
    let mut f = 0.0;
    for (i, (&yb, &y)) in ybar.iter().zip(&m.y).enumerate() {
        if y == 0 {
            f += yb;
        } else if yb > 0.0 {
            f += yb - y as f64 * yb.ln();
        } else {
            return Err(Error::Degenerate(format!(
                "ray {i} has {y} counts but mean {yb}"
            )));
        }
    }
    Ok(f)
}

/// `f(x) = 1ᵀ(Ax + r̄) − yᵀ log(Ax + r̄)`. Rays with `y_i = 0` contribute `ȳ_i`.
pub fn poisson_nll<A: SystemModel + ?Sized>(x: &Image, m: &Measurement, a: &A) -> Result<f64> {
    check_nonnegative(x)?;
    nll_from_mean(&mean_measurement(x, m, a)?, m)
}

/// `y_i / ȳ_i`, with `0/0` taken as 0.
fn count_ratio(ybar: &[f64], m: &Measurement) -> Result<Vec<f64>> {
    ybar.iter()
        .zip(&m.y)
        .enumerate()
        .map(|(i, (&yb, &y))| {
            if y == 0 {
                Ok(0.0)
            } else if yb > 0.0 {
                Ok(y as f64 / yb)
            } else {
                Err(Error::Degenerate(format!("ray {i} has {y} counts but mean {yb}")))
            }
        })
        .collect()
}

/// `e_j(x) = Σ_i a_ij y_i / ȳ_i(x)`.
pub fn em_backprojection<A: SystemModel + ?Sized>(x: &Image, m: &Measurement, a: &A) -> Result<Image> {
    let ratio = count_ratio(&mean_measurement(x, m, a)?, m)?;
    let (na, nb) = m.shape();
    a.back(&Sinogram::new(na, nb, ratio)?)
}

/// `∇f(x) = Aᵀ(1 − y/ȳ) = a − e(x)`.
pub fn poisson_gradient<A: SystemModel + ?Sized>(x: &Image, m: &Measurement, a: &A) -> Result<Image> {
    let e = em_backprojection(x, m, a)?;
    let sens = a.sensitivity();
    Ok(Image::new(
        x.nx(),
        x.ny(),
        sens.as_slice().iter().zip(e.as_slice()).map(|(s, e)| s - e).collect(),
    )?)
}

/// One MLEM iteration `x⁺_j = x_j e_j(x) / a_j`.
pub fn em_step<A: SystemModel + ?Sized>(x: &Image, m: &Measurement, a: &A) -> Result<Image> {
    check_nonnegative(x)?;
    let e = em_backprojection(x, m, a)?;
    let sens = a.sensitivity().as_slice();
    let out = x
        .as_slice()
        .iter()
        .zip(e.as_slice())
        .zip(sens)
        .enumerate()
        .map(|(j, ((&xj, &ej), &aj))| {
            if xj == 0.0 {
                Ok(0.0)
            } else if aj > 0.0 {
                Ok(xj * ej / aj)
            } else {
                Err(Error::Degenerate(format!("voxel {j} has activity but zero sensitivity")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Image::new(x.nx(), x.ny(), out)
}

/// Minimizer over `t ≥ 0` of `−ν log t + a t + (β/2)(t − u)²`, i.e. the
/// nonnegative root of `β t² + (a − β u) t − ν = 0`.
///
/// With `λ = (a − β u)/2` the two algebraically equal forms
/// `(√(λ² + βν) − λ)/β` (for `λ < 0`) and `ν/(√(λ² + βν) + λ)` (for `λ ≥ 0`)
/// avoid cancellation.
pub fn map_em_root(a: f64, beta: f64, u: f64, nu: f64) -> f64 {
    let lambda = 0.5 * (a - beta * u);
    if nu == 0.0 {
        return if lambda < 0.0 { -2.0 * lambda / beta } else { 0.0 };
    }
    let disc = (lambda * lambda + beta * nu).sqrt();
    if lambda < 0.0 {
        (disc - lambda) / beta
    } else {
        nu / (disc + lambda)
    }
}

/// One MAP-EM iteration for `f(x) + (β/2)‖x − u‖²` using the EM surrogate
/// expanded at `x`.
pub fn map_em_step<A: SystemModel + ?Sized>(
    x: &Image,
    u: &Image,
    beta: f64,
    m: &Measurement,
    a: &A,
) -> Result<Image> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive (got {beta})")));
    }
    x.same_shape(u)?;
    check_nonnegative(x)?;
    let e = em_backprojection(x, m, a)?;
    let sens = a.sensitivity().as_slice();
    let out = x
        .as_slice()
        .iter()
        .zip(e.as_slice())
        .zip(sens)
        .zip(u.as_slice())
        .map(|(((&xj, &ej), &aj), &uj)| map_em_root(aj, beta, uj, ej * xj))
        .collect();
    Image::new(x.nx(), x.ny(), out)
}

/// The separable EM surrogate of `f` expanded at a point `x⁽ⁿ⁾`:
///
/// ```text
/// S(x) = Σ_j [a_j x_j − ν_j log x_j] + C,   ν_j = e_j(x⁽ⁿ⁾) x⁽ⁿ⁾_j,
/// C = Σ_i (r̄_i − y_i log ȳ_i(x⁽ⁿ⁾)) + Σ_j ν_j log x⁽ⁿ⁾_j
/// ```
///
/// so that `S ≥ f` on `x ≥ 0` with equality at the expansion point.
#[derive(Debug, Clone)]
pub struct EmSurrogate {
    pub sensitivity: Vec<f64>,
    pub nu: Vec<f64>,
    pub constant: f64,
}

impl EmSurrogate {
    pub fn new<A: SystemModel + ?Sized>(expansion: &Image, m: &Measurement, a: &A) -> Result<Self> {
        check_nonnegative(expansion)?;
        let ybar = mean_measurement(expansion, m, a)?;
        let ratio = count_ratio(&ybar, m)?;
        let (na, nb) = m.shape();
        let e = a.back(&Sinogram::new(na, nb, ratio)?)?;
        let nu: Vec<f64> = e
            .as_slice()
            .iter()
            .zip(expansion.as_slice())
            .map(|(e, x)| e * x)
            .collect();
        let mut constant = 0.0;
        for ((&yb, &y), &r) in ybar.iter().zip(&m.y).zip(&m.r_bar) {
            constant += r;
            if y > 0 {
                constant -= y as f64 * yb.ln();
            }
        }
        for (&n, &x) in nu.iter().zip(expansion.as_slice()) {
            if n > 0.0 {
                constant += n * x.ln();
            }
        }
        Ok(Self {
            sensitivity: a.sensitivity().as_slice().to_vec(),
            nu,
            constant,
        })
    }

    /// Per-voxel term `Q_j(t) = a_j t − ν_j log t + (β/2)(t − u_j)²`.
    pub fn q(&self, j: usize, t: f64, beta: f64, u: f64) -> f64 {
        let log_term = if self.nu[j] > 0.0 { self.nu[j] * t.ln() } else { 0.0 };
        self.sensitivity[j] * t - log_term + 0.5 * beta * (t - u) * (t - u)
    }

    /// `Σ_j Q_j(x_j) + C`, a majorizer of `f(x) + (β/2)‖x − u‖²`.
    pub fn value(&self, x: &Image, beta: f64, u: &Image) -> f64 {
        let s: f64 = (0..x.len())
            .map(|j| self.q(j, x.as_slice()[j], beta, u.as_slice()[j]))
            .sum();
        s + self.constant
    }
}
