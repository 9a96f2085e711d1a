//! Non-local means regularizer with the Fair potential, solved by ADMM.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::phantom::Measurement;
use crate::projector::SystemModel;

use super::em::{map_em_step, poisson_nll};
use super::{initial_image, NlmConfig, ReconConfig, ReconTrace};

/// Fair potential `p(t) = σ²(s − log(1 + s))`, `s = √(t / (σ² N_f))`.
pub fn fair_potential(t: f64, sigma_f: f64, n_f: usize) -> f64 {
    let s = (t / (sigma_f * sigma_f * n_f as f64)).sqrt();
    sigma_f * sigma_f * (s - s.ln_1p())
}

/// `p'(t) = 1 / (2 N_f (1 + s))`; bounded by `1/(2N_f)` at `t = 0`.
pub fn fair_potential_derivative(t: f64, sigma_f: f64, n_f: usize) -> f64 {
    let s = (t / (sigma_f * sigma_f * n_f as f64)).sqrt();
    1.0 / (2.0 * n_f as f64 * (1.0 + s))
}

/// `R(x) = β Σ_i Σ_{j ∈ S_i, j ≠ i} p(‖N_i x − N_j x‖²)` with zero-padded
/// patches and search neighbours restricted to the image.
#[derive(Debug, Clone)]
pub struct NlmRegularizer {
    nx: usize,
    ny: usize,
    patch: usize,
    search: usize,
    sigma_f: f64,
    beta: f64,
}

impl NlmRegularizer {
    pub fn new(nx: usize, ny: usize, cfg: &NlmConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.patch > nx.min(ny) || cfg.search > nx.min(ny) {
            return Err(Error::invalid(format!(
                "patch {} / search {} exceed the {nx}x{ny} image",
                cfg.patch, cfg.search
            )));
        }
        Ok(Self {
            nx,
            ny,
            patch: cfg.patch,
            search: cfg.search,
            sigma_f: cfg.sigma_f,
            beta: cfg.beta,
        })
    }

    fn n_f(&self) -> usize {
        self.patch * self.patch
    }

    /// Upper bound on the gradient's Lipschitz constant, `4β(S² − 1)`.
    pub fn lipschitz(&self) -> f64 {
        4.0 * self.beta * (self.search * self.search - 1) as f64
    }

    /// For every search offset, calls `f(offset, d, t)` where `d` is the
    /// difference image `x(k) − x(k + offset)` on the grid extended by the
    /// patch radius and `t` holds the squared patch distances for the
    /// image voxels (`None` where the neighbour leaves the image).
    fn for_each_offset(&self, x: &[f64], mut f: impl FnMut((isize, isize), &[f64], &[Option<f64>])) {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let hs = (self.search / 2) as isize;
        let hp = (self.patch / 2) as isize;
        let (ex, ey) = (nx + 2 * hp, ny + 2 * hp);
        let at = |ix: isize, iy: isize| -> f64 {
            if ix < 0 || iy < 0 || ix >= nx || iy >= ny {
                0.0
            } else {
                x[(iy * nx + ix) as usize]
            }
        };
        let mut d = vec![0.0; (ex * ey) as usize];
        let mut sq = vec![0.0; d.len()];
        let mut t = vec![None; x.len()];
        for dy in -hs..=hs {
            for dx in -hs..=hs {
                if dx == 0 && dy == 0 {
                    continue;
                }
                for ky in 0..ey {
                    for kx in 0..ex {
                        let (ix, iy) = (kx - hp, ky - hp);
                        let v = at(ix, iy) - at(ix + dx, iy + dy);
                        d[(ky * ex + kx) as usize] = v;
                        sq[(ky * ex + kx) as usize] = v * v;
                    }
                }
                let boxed = box_sum(&sq, ex as usize, ey as usize, hp as usize);
                for iy in 0..ny {
                    for ix in 0..nx {
                        let (jx, jy) = (ix + dx, iy + dy);
                        let inside = jx >= 0 && jy >= 0 && jx < nx && jy < ny;
                        t[(iy * nx + ix) as usize] =
                            inside.then(|| boxed[((iy + hp) * ex + ix + hp) as usize]);
                    }
                }
                f((dx, dy), &d, &t);
            }
        }
    }

    pub fn value(&self, x: &Image) -> Result<f64> {
        x.check_shape(self.nx, self.ny)?;
        if self.beta == 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        let n_f = self.n_f();
        self.for_each_offset(x.as_slice(), |_, _, t| {
            acc += t.iter().flatten().map(|&t| fair_potential(t, self.sigma_f, n_f)).sum::<f64>();
        });
        Ok(self.beta * acc)
    }

    pub fn gradient(&self, x: &Image) -> Result<Image> {
        x.check_shape(self.nx, self.ny)?;
        let mut g = vec![0.0; x.len()];
        if self.beta == 0.0 {
            return Image::new(self.nx, self.ny, g);
        }
        let n_f = self.n_f();
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let hp = (self.patch / 2) as isize;
        let (ex, ey) = (nx + 2 * hp, ny + 2 * hp);
        let mut w = vec![0.0; (ex * ey) as usize];
        self.for_each_offset(x.as_slice(), |(dx, dy), d, t| {
            // dR/dx(k) = Σ_i 2βp'(t_i) d(k) over patches i containing k,
            // and the opposite sign at k + offset.
            for iy in 0..ny {
                for ix in 0..nx {
                    w[((iy + hp) * ex + ix + hp) as usize] = t[(iy * nx + ix) as usize]
                        .map_or(0.0, |t| 2.0 * self.beta * fair_potential_derivative(t, self.sigma_f, n_f));
                }
            }
            let spread = box_sum(&w, ex as usize, ey as usize, hp as usize);
            for ky in 0..ey {
                for kx in 0..ex {
                    let e = (ky * ex + kx) as usize;
                    let c = d[e] * spread[e];
                    if c == 0.0 {
                        continue;
                    }
                    let (ix, iy) = (kx - hp, ky - hp);
                    if ix >= 0 && iy >= 0 && ix < nx && iy < ny {
                        g[(iy * nx + ix) as usize] += c;
                    }
                    let (jx, jy) = (ix + dx, iy + dy);
                    if jx >= 0 && jy >= 0 && jx < nx && jy < ny {
                        g[(jy * nx + jx) as usize] -= c;
                    }
                }
            }
        });
        Image::new(self.nx, self.ny, g)
    }
}

/// `out(k) = Σ_{|o|∞ ≤ r} src(k + o)`, zero outside the grid.
fn box_sum(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = src[y * w + lo..=y * w + hi].iter().sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).sum();
        }
    }
    out
}

fn combine(a: &Image, b: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
    Image::new(
        a.nx(),
        a.ny(),
        a.as_slice().iter().zip(b.as_slice()).map(|(&p, &q)| f(p, q)).collect(),
    )
    .expect("shapes agree")
}

fn dist2(a: &Image, b: &Image) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// ADMM on `f(x) + R(v)` subject to `x = v`, with a MAP-EM x-update,
/// gradient-descent v-update, scaled dual `w`, and residual balancing of
/// the penalty `ρ`. Residuals `(‖x − v‖, ρ‖v − v_prev‖)` are recorded per
/// iteration. `relaxation` over-relaxes the x-iterate in the v and dual steps.
pub fn nlm_admm_reconstruct<A: SystemModel + ?Sized>(
    m: &Measurement,
    a: &A,
    cfg: &ReconConfig,
) -> Result<(Image, ReconTrace)> {
    cfg.validate()?;
    let nc = &cfg.nlm;
    let (nx, ny) = a.image_shape();
    let reg = NlmRegularizer::new(nx, ny, nc)?;
    let mut x = initial_image(m, a, cfg.n_em_init)?;
    let mut rho = match nc.rho {
        Some(r) => r,
        None => {
            let sens = a.sensitivity().as_slice();
            let support: Vec<usize> = (0..sens.len()).filter(|&j| sens[j] > 0.0).collect();
            let mean_a = support.iter().map(|&j| sens[j]).sum::<f64>() / support.len() as f64;
            let mean_x = support.iter().map(|&j| x.as_slice()[j]).sum::<f64>() / support.len() as f64;
            if mean_x > 0.0 { mean_a / mean_x } else { 1.0 }
        }
    };
    let mut v = x.clone();
    let mut w = Image::zeros(nx, ny);

    let mut trace = ReconTrace::default();
    let f = poisson_nll(&x, m, a)?;
    trace.push(x.clone(), f, f + reg.value(&x)?, Some(nc.beta));

    for _ in 0..cfg.iterations {
        let target = combine(&v, &w, |v, w| v - w);
        for _ in 0..nc.x_steps {
            x = map_em_step(&x, &target, rho, m, a)?;
        }
        let x_rel = combine(&x, &v, |x, v| nc.relaxation * x + (1.0 - nc.relaxation) * v);

        let anchor = combine(&x_rel, &w, |x, w| x + w);
        let step = 1.0 / (reg.lipschitz() + rho);
        let mut v_new = v.clone();
        for _ in 0..nc.v_steps {
            let g = reg.gradient(&v_new)?;
            for ((vj, gj), bj) in v_new.as_mut_slice().iter_mut().zip(g.as_slice()).zip(anchor.as_slice()) {
                *vj -= step * (gj + rho * (*vj - bj));
            }
        }
        let w_new = combine(&combine(&w, &x_rel, |w, x| w + x), &v_new, |s, v| s - v);

        let primal = dist2(&x, &v_new).sqrt();
        let dual = rho * dist2(&v_new, &v).sqrt();
        trace.residuals.push((primal, dual));
        log::trace!("rho {rho:.3e} primal {primal:.3e} dual {dual:.3e}");

        v = v_new;
        w = w_new;

        let factor = if primal > nc.mu * dual {
            nc.rho_factor
        } else if dual > nc.mu * primal {
            1.0 / nc.rho_factor
        } else {
            1.0
        };
        if factor != 1.0 {
            rho *= factor;
            w = w.scaled(1.0 / factor);
        }

        let f = poisson_nll(&x, m, a)?;
        trace.push(x.clone(), f, f + reg.value(&x)?, Some(nc.beta));
    }
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fair_potential_shape() {
        assert_eq!(fair_potential(0.0, 2.0, 9), 0.0);
        let mut prev = 0.0;
        for k in 1..50 {
            let t = k as f64 * 0.3;
            let p = fair_potential(t, 2.0, 9);
            assert!(p > prev);
            assert!(fair_potential_derivative(t, 2.0, 9) > 0.0);
            prev = p;
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for &t in &[0.01, 0.5, 3.0, 40.0] {
            let h = 1e-6 * t;
            let fd = (fair_potential(t + h, 1.5, 9) - fair_potential(t - h, 1.5, 9)) / (2.0 * h);
            let an = fair_potential_derivative(t, 1.5, 9);
            assert!((fd - an).abs() < 1e-6 * an, "{fd} vs {an}");
        }
    }

    #[test]
    fn regularizer_gradient_matches_finite_difference() {
        let cfg = NlmConfig { beta: 0.7, sigma_f: 0.8, patch: 3, search: 5, ..Default::default() };
        let reg = NlmRegularizer::new(7, 6, &cfg).unwrap();
        let x = Image::new(7, 6, (0..42).map(|i| ((i * 29) % 13) as f64 * 0.3).collect()).unwrap();
        let g = reg.gradient(&x).unwrap();
        for j in [0, 5, 17, 41] {
            let h = 1e-6;
            let mut p = x.clone();
            p.as_mut_slice()[j] += h;
            let mut q = x.clone();
            q.as_mut_slice()[j] -= h;
            let fd = (reg.value(&p).unwrap() - reg.value(&q).unwrap()) / (2.0 * h);
            assert!((fd - g.as_slice()[j]).abs() < 1e-6 * g.as_slice()[j].abs().max(1.0));
        }
    }

    #[test]
    fn constant_image_is_stationary() {
        let cfg = NlmConfig { beta: 1.0, ..Default::default() };
        let reg = NlmRegularizer::new(9, 9, &cfg).unwrap();
        // Zero padding makes edges non-stationary, but a zero image is.
        assert_eq!(reg.value(&Image::zeros(9, 9)).unwrap(), 0.0);
        assert!(reg.gradient(&Image::zeros(9, 9)).unwrap().as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = NlmConfig { search: 9, ..Default::default() };
        assert!(NlmRegularizer::new(8, 8, &cfg).is_err());
        let cfg = NlmConfig { sigma_f: -1.0, ..Default::default() };
        assert!(NlmRegularizer::new(8, 8, &cfg).is_err());
    }
}
