//! Total-variation regularized reconstruction by primal-dual hybrid gradient.

use crate::error::Result;
use crate::image::{norm2, Image, Sinogram};
use crate::phantom::Measurement;
use crate::projector::SystemModel;

use super::em::poisson_nll;
use super::{initial_image, ReconConfig, ReconTrace};

/// Forward differences `[Dx x; Dy x]`, zero on the last column/row.
pub fn finite_diff(x: &Image) -> Vec<f64> {
    let (nx, ny) = x.shape();
    let v = x.as_slice();
    let n = v.len();
    let mut out = vec![0.0; 2 * n];
    for iy in 0..ny {
        for ix in 0..nx {
            let j = iy * nx + ix;
            if ix + 1 < nx {
                out[j] = v[j + 1] - v[j];
            }
            if iy + 1 < ny {
                out[n + j] = v[j + nx] - v[j];
            }
        }
    }
    out
}

/// Adjoint of [`finite_diff`].
pub fn finite_diff_adjoint(q: &[f64], nx: usize, ny: usize) -> Image {
    let n = nx * ny;
    assert_eq!(q.len(), 2 * n, "dual vector length");
    let mut out = vec![0.0; n];
    for iy in 0..ny {
        for ix in 0..nx {
            let j = iy * nx + ix;
            if ix + 1 < nx {
                out[j + 1] += q[j];
                out[j] -= q[j];
            }
            if iy + 1 < ny {
                out[j + nx] += q[n + j];
                out[j] -= q[n + j];
            }
        }
    }
    Image::new(nx, ny, out).expect("shape")
}

/// Anisotropic total variation `‖Cx‖₁`.
pub fn total_variation(x: &Image) -> f64 {
    finite_diff(x).iter().map(|d| d.abs()).sum()
}

/// Power-iteration estimate of `‖[A; C]‖₂`.
pub fn operator_norm_estimate<A: SystemModel + ?Sized>(a: &A, iterations: usize) -> Result<f64> {
    let (nx, ny) = a.image_shape();
    let mut v = Image::filled(nx, ny, 1.0 / ((nx * ny) as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let mut w = a.back(&a.forward(&v)?)?;
        let ctc = finite_diff_adjoint(&finite_diff(&v), nx, ny);
        for (p, q) in w.as_mut_slice().iter_mut().zip(ctc.as_slice()) {
            *p += q;
        }
        lambda = norm2(w.as_slice());
        if lambda == 0.0 {
            break;
        }
        v = w.scaled(1.0 / lambda);
    }
    Ok(lambda.sqrt())
}

/// `prox_{σ F*}` for the Poisson data term, elementwise.
fn poisson_dual_prox(v: f64, sigma: f64, y: f64, r: f64) -> f64 {
    let b = v + sigma * r;
    0.5 * (b + 1.0 - ((b - 1.0) * (b - 1.0) + 4.0 * sigma * y).sqrt())
}

/// PDHG for `min_{x ≥ 0} f(x) + β ‖Cx‖₁`, started from `n_em_init` EM
/// iterations with the data dual at its optimal value for that start.
pub fn tv_pdhg_reconstruct<A: SystemModel + ?Sized>(
    m: &Measurement,
    a: &A,
    cfg: &ReconConfig,
) -> Result<(Image, ReconTrace)> {
    cfg.validate()?;
    let tv = &cfg.tv;
    let beta = tv.beta;
    let l = operator_norm_estimate(a, tv.power_iterations)?;
    let sigma = tv.sigma.unwrap_or(0.99 / l);
    let tau = tv.tau.unwrap_or(0.99 / l);
    if sigma * tau * l * l >= 1.0 {
        log::warn!("PDHG steps sigma={sigma:.3e}, tau={tau:.3e} exceed 1/|K|^2 ({l:.3e}); iterates may diverge");
    }

    let (nx, ny) = a.image_shape();
    let (na, nb) = m.shape();
    let y = m.y_f64();
    let mut x = initial_image(m, a, cfg.n_em_init)?;
    let ax = a.forward(&x)?;
    let mut w: Vec<f64> = ax
        .as_slice()
        .iter()
        .zip(&y)
        .zip(&m.r_bar)
        .map(|((&p, &yi), &r)| if yi > 0.0 { 1.0 - yi / (p + r) } else { 1.0 })
        .collect();
    let mut q = vec![0.0; 2 * nx * ny];
    let mut x_bar = x.clone();

    let objective = |x: &Image| -> Result<(f64, f64)> {
        let f = poisson_nll(x, m, a)?;
        Ok((f, f + beta * total_variation(x)))
    };
    let mut trace = ReconTrace::default();
    let (f, obj) = objective(&x)?;
    trace.push(x.clone(), f, obj, Some(beta));

    for _ in 0..cfg.iterations {
        let p = a.forward(&x_bar)?;
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = poisson_dual_prox(*wi + sigma * p.as_slice()[i], sigma, y[i], m.r_bar[i]);
        }
        let d = finite_diff(&x_bar);
        for (qi, di) in q.iter_mut().zip(&d) {
            *qi = (*qi + sigma * di).clamp(-beta, beta);
        }
        let mut g = a.back(&Sinogram::new(na, nb, w.clone())?)?;
        let ctq = finite_diff_adjoint(&q, nx, ny);
        for (gi, ci) in g.as_mut_slice().iter_mut().zip(ctq.as_slice()) {
            *gi += ci;
        }
        let next = Image::new(
            nx,
            ny,
            x.as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(xi, gi)| (xi - tau * gi).max(0.0))
                .collect(),
        )?;
        x_bar = Image::new(
            nx,
            ny,
            next.as_slice().iter().zip(x.as_slice()).map(|(n, o)| 2.0 * n - o).collect(),
        )?;
        x = next;
        let (f, obj) = objective(&x)?;
        trace.push(x.clone(), f, obj, Some(beta));
    }
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::dot;

    #[test]
    fn difference_adjoint() {
        let x = Image::new(5, 4, (0..20).map(|i| ((i * 37) % 11) as f64 - 3.0).collect()).unwrap();
        let q: Vec<f64> = (0..40).map(|i| ((i * 13) % 7) as f64 * 0.5 - 1.0).collect();
        let lhs = dot(&finite_diff(&x), &q);
        let rhs = dot(x.as_slice(), finite_diff_adjoint(&q, 5, 4).as_slice());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_tv() {
        assert_eq!(total_variation(&Image::filled(6, 3, 2.5)), 0.0);
        let mut x = Image::zeros(3, 3);
        x.set(1, 1, 1.0);
        assert_eq!(total_variation(&x), 4.0);
    }

    #[test]
    fn dual_prox_matches_moreau() {
        // prox_{σF*}(v) = v − σ prox_{F/σ}(v/σ); check the stationarity of the primal prox.
        let (sigma, y, r) = (0.7, 4.0, 0.5);
        for &v in &[-3.0, 0.0, 0.4, 2.0] {
            let w = poisson_dual_prox(v, sigma, y, r);
            let z = (v - w) / sigma;
            let stationarity = 1.0 - y / (z + r) + sigma * (z - v / sigma);
            assert!(stationarity.abs() < 1e-12, "{stationarity}");
            assert!(w <= 1.0);
        }
    }
}
