//! Denoiser input normalization, output rescaling, and the adaptive β rule.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::phantom::Measurement;
use crate::projector::SystemModel;

use super::em::em_backprojection;

const S_MIN: f64 = 1e-6;
const S_MAX: f64 = 1e6;
const NEWTON_TOL: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 50;
const BETA_DENOM_FLOOR: f64 = 1e-12;

/// `g1(v) = v / Σ v`.
pub fn normalize_g1(v: &Image) -> Result<Image> {
    let s = v.sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("cannot normalize image with sum {s}")));
    }
    Ok(v.map(|x| x / s))
}

/// Result of the 1-D scale fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFit {
    pub s: f64,
    pub iterations: usize,
}

/// First and second derivative of `h(s) = f(s v)` given `p = A v`.
fn scale_derivatives(s: f64, p: &[f64], m: &Measurement) -> (f64, f64) {
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for ((&pi, &yi), &ri) in p.iter().zip(&m.y).zip(&m.r_bar) {
        d1 += pi;
        if yi > 0 && pi > 0.0 {
            let yb = s * pi + ri;
            let y = yi as f64;
            d1 -= y * pi / yb;
            d2 += y * pi * pi / (yb * yb);
        }
    }
    (d1, d2)
}

/// `∂/∂s f(s v)` at a given `s`.
pub fn scale_gradient<A: SystemModel + ?Sized>(v: &Image, s: f64, m: &Measurement, a: &A) -> Result<f64> {
    m.check_model(a)?;
    let p = a.forward(v)?;
    Ok(scale_derivatives(s, p.as_slice(), m).0)
}

/// Finds `s* = argmin_{s>0} f(s v)` by Newton's method from `s = 1`,
/// safeguarded by a bracket on `[1e-6, 1e6]`.
pub fn fit_scale<A: SystemModel + ?Sized>(v: &Image, m: &Measurement, a: &A) -> Result<ScaleFit> {
    m.check_model(a)?;
    if v.as_slice().iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::invalid("scaling input must be nonnegative"));
    }
    if v.sum() <= 0.0 {
        return Err(Error::Degenerate("cannot scale an all-zero image".into()));
    }
    let p = a.forward(v)?;
    let p = p.as_slice();
    let (mut lo, mut hi) = (S_MIN, S_MAX);
    let mut s = 1.0;
    for it in 1..=NEWTON_MAX_ITER {
        let (d1, d2) = scale_derivatives(s, p, m);
        if !d1.is_finite() || !d2.is_finite() {
            return Err(Error::Degenerate(format!("non-finite scale derivative at s = {s}")));
        }
        if d1 == 0.0 {
            return Ok(ScaleFit { s, iterations: it });
        }
        // h is convex, so the sign of h' shrinks the bracket.
        if d1 > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if d2 <= 0.0 {
            return Err(Error::Degenerate("no counts constrain the scale".into()));
        }
        let mut next = s - d1 / d2;
        if !next.is_finite() || next <= lo || next >= hi {
            next = (lo * hi).sqrt();
        }
        let step = (next - s).abs();
        s = next;
        if step < NEWTON_TOL * s {
            return Ok(ScaleFit { s, iterations: it });
        }
    }
    Ok(ScaleFit { s, iterations: NEWTON_MAX_ITER })
}

/// `g2(v) = s* v` with `s*` the maximum-likelihood scale.
pub fn scale_g2<A: SystemModel + ?Sized>(v: &Image, m: &Measurement, a: &A) -> Result<Image> {
    let fit = fit_scale(v, m, a)?;
    Ok(v.scaled(fit.s))
}

/// `β = c ‖a − e(x)‖ / ‖x − target‖`, both norms over voxels with `a_j > 0`.
///
/// A denominator below `1e-12` is reported as [`Error::Degenerate`] so the
/// caller can keep its previous value.
pub fn adaptive_beta<A: SystemModel + ?Sized>(
    x: &Image,
    target: &Image,
    m: &Measurement,
    a: &A,
    c: f64,
) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("balance constant must be positive (got {c})")));
    }
    x.same_shape(target)?;
    let e = em_backprojection(x, m, a)?;
    let sens = a.sensitivity().as_slice();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..x.len() {
        if sens[j] > 0.0 {
            let g = sens[j] - e.as_slice()[j];
            let d = x.as_slice()[j] - target.as_slice()[j];
            num += g * g;
            den += d * d;
        }
    }
    let den = den.sqrt();
    if den < BETA_DENOM_FLOOR {
        return Err(Error::Degenerate(format!("regularizer gradient norm {den} is zero")));
    }
    Ok(c * num.sqrt() / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::{Geometry, Projector};

    #[test]
    fn g1_examples() {
        let v = Image::filled(4, 4, 3.0);
        assert!(normalize_g1(&v).unwrap().as_slice().iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-17));
        let w = Image::new(2, 2, vec![1.0, 5.0, 2.0, 0.5]).unwrap();
        let g = normalize_g1(&w).unwrap();
        assert!((g.sum() - 1.0).abs() < 1e-15);
        assert_eq!(g.argmax(), w.argmax());
        let gg = normalize_g1(&g).unwrap();
        for (p, q) in g.as_slice().iter().zip(gg.as_slice()) {
            assert!((p - q).abs() < 1e-16);
        }
        assert!(normalize_g1(&Image::zeros(2, 2)).is_err());
    }

    fn setup(r: f64) -> (Projector, Measurement, Image) {
        let a = Projector::new(Geometry::square(8, 6)).unwrap();
        let (na, nb) = a.sinogram_shape();
        let y: Vec<u64> = (0..na * nb).map(|i| ((i * 7) % 11) as u64).collect();
        let m = Measurement::new(na, nb, y, vec![r; na * nb]).unwrap();
        let v = Image::new(8, 8, (0..64).map(|j| 0.1 + (j % 3) as f64).collect()).unwrap();
        (a, m, v)
    }

    #[test]
    fn closed_form_without_randoms() {
        let (a, mut m, v) = setup(0.0);
        let p = a.forward(&v).unwrap();
        for (y, &pi) in m.y.iter_mut().zip(p.as_slice()) {
            if pi == 0.0 {
                *y = 0;
            }
        }
        let fit = fit_scale(&v, &m, &a).unwrap();
        let total_y: f64 = m.y.iter().map(|&y| y as f64).sum();
        let expect = total_y / a.forward(&v).unwrap().sum();
        assert!((fit.s - expect).abs() / expect < 1e-8);
    }

    #[test]
    fn stationary_with_randoms_and_idempotent() {
        let (a, m, v) = setup(0.3);
        let g = scale_g2(&v, &m, &a).unwrap();
        let scale = scale_gradient(&v, 1.0, &m, &a).unwrap().abs();
        assert!(scale_gradient(&g, 1.0, &m, &a).unwrap().abs() < 1e-8 * scale);
        assert!((fit_scale(&g, &m, &a).unwrap().s - 1.0).abs() < 1e-8);
    }

    #[test]
    fn zero_image_errors() {
        let (a, m, _) = setup(0.3);
        assert!(scale_g2(&Image::zeros(8, 8), &m, &a).is_err());
    }

    #[test]
    fn beta_linear_in_c_and_degenerate() {
        let (a, m, v) = setup(0.3);
        let t = v.map(|x| x * 1.5 + 0.1);
        let b1 = adaptive_beta(&v, &t, &m, &a, 0.01).unwrap();
        let b2 = adaptive_beta(&v, &t, &m, &a, 0.02).unwrap();
        assert_eq!(b2, 2.0 * b1);
        assert!(matches!(adaptive_beta(&v, &v, &m, &a, 0.01), Err(Error::Degenerate(_))));
        assert!(adaptive_beta(&v, &t, &m, &a, 0.0).is_err());
    }
}
