use proptest::prelude::*;

use bcdpet::phantom::Measurement;
use bcdpet::recon::{
    em_step, finite_diff, finite_diff_adjoint, fair_potential, fair_potential_derivative, fit_scale, map_em_root,
    map_em_step, poisson_nll, scale_gradient, EmSurrogate, NlmConfig, NlmRegularizer,
};
use bcdpet::{Geometry, Image, Projector, SystemModel};

const N: usize = 8;

fn problem(seed: u64) -> (Projector, Measurement, Image) {
    let a = Projector::new(Geometry::square(N, 12)).unwrap();
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let truth = Image::new(N, N, (0..N * N).map(|_| 0.2 + next()).collect()).unwrap();
    let p = a.forward(&truth).unwrap();
    let (na, nb) = (p.n_angles(), p.n_bins());
    // Integer counts near the mean plus a deterministic jitter.
    let y = p.as_slice().iter().map(|&v| (v * (0.6 + 0.8 * next())).round() as u64).collect();
    let m = Measurement::new(na, nb, y, vec![0.1; na * nb]).unwrap();
    let start = Image::new(N, N, vec![1.0; N * N]).unwrap();
    (a, m, start)
}

fn q(a: f64, beta: f64, u: f64, nu: f64, t: f64) -> f64 {
    let log = if nu > 0.0 { nu * t.ln() } else { 0.0 };
    a * t - log + 0.5 * beta * (t - u) * (t - u)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn map_em_root_is_stationary_and_minimal(
        la in -1.0f64..1.0,
        lb in -3.0f64..2.0,
        u in -5.0f64..20.0,
        nu in 0.0f64..50.0,
    ) {
        let (a, beta) = (10f64.powf(la), 10f64.powf(lb));
        let t = map_em_root(a, beta, u, nu);
        prop_assert!(t >= 0.0 && t.is_finite());
        if nu > 0.0 {
            let d = a - nu / t + beta * (t - u);
            let scale = a + nu / t + beta * (t.abs() + u.abs());
            prop_assert!(d.abs() <= 1e-9 * scale, "derivative {d} at t = {t}");
        }
        let f0 = q(a, beta, u, nu, t);
        for k in [0.5, 0.9, 1.1, 2.0] {
            let s = t * k + if t == 0.0 { 0.1 * k } else { 0.0 };
            prop_assert!(q(a, beta, u, nu, s) >= f0 - 1e-9 * f0.abs().max(1.0));
        }
    }

    #[test]
    fn fair_potential_is_convex_and_increasing_in_norm(
        r1 in 0.0f64..20.0, r2 in 0.0f64..20.0, sigma in 0.05f64..5.0,
    ) {
        // Convex as a function of the patch distance r = √t.
        let p = |r: f64| fair_potential(r * r, sigma, 9);
        let mid = p(0.5 * (r1 + r2));
        prop_assert!(mid <= 0.5 * (p(r1) + p(r2)) + 1e-12);
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(p(lo) <= p(hi) + 1e-12);
        prop_assert!(fair_potential_derivative(r1 * r1, sigma, 9) <= 1.0 / 18.0 + 1e-15);
    }

    #[test]
    fn finite_diff_adjoint_identity(
        x in prop::collection::vec(-5.0f64..5.0, 35),
        q in prop::collection::vec(-5.0f64..5.0, 70),
    ) {
        let img = Image::new(7, 5, x).unwrap();
        let lhs: f64 = finite_diff(&img).iter().zip(&q).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.as_slice().iter().zip(finite_diff_adjoint(&q, 7, 5).as_slice()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn surrogate_majorizes_and_touches(
        seed in any::<u64>(),
        x in prop::collection::vec(0.01f64..3.0, N * N),
        e in prop::collection::vec(0.05f64..3.0, N * N),
    ) {
        let (a, m, _) = problem(seed);
        let expansion = Image::new(N, N, e).unwrap();
        let sur = EmSurrogate::new(&expansion, &m, &a).unwrap();
        let zero = Image::new(N, N, vec![0.0; N * N]).unwrap();
        let f_exp = poisson_nll(&expansion, &m, &a).unwrap();
        let s_exp = sur.value(&expansion, 0.0, &zero);
        prop_assert!((f_exp - s_exp).abs() <= 1e-9 * f_exp.abs().max(1.0));
        let x = Image::new(N, N, x).unwrap();
        let f = poisson_nll(&x, &m, &a).unwrap();
        prop_assert!(sur.value(&x, 0.0, &zero) >= f - 1e-9 * f.abs().max(1.0));
    }

    #[test]
    fn map_em_step_decreases_penalized_objective(
        seed in any::<u64>(),
        beta in 0.01f64..10.0,
        u in prop::collection::vec(-1.0f64..3.0, N * N),
    ) {
        let (a, m, mut x) = problem(seed);
        let u = Image::new(N, N, u).unwrap();
        let obj = |x: &Image| {
            let d: f64 = x.as_slice().iter().zip(u.as_slice()).map(|(p, q)| (p - q) * (p - q)).sum();
            poisson_nll(x, &m, &a).unwrap() + 0.5 * beta * d
        };
        let mut prev = obj(&x);
        for _ in 0..5 {
            x = map_em_step(&x, &u, beta, &m, &a).unwrap();
            let cur = obj(&x);
            prop_assert!(cur <= prev + 1e-9 * prev.abs().max(1.0), "{cur} > {prev}");
            prev = cur;
        }
    }
}

#[test]
fn em_is_monotone() {
    let (a, m, mut x) = problem(3);
    let mut prev = poisson_nll(&x, &m, &a).unwrap();
    for _ in 0..50 {
        x = em_step(&x, &m, &a).unwrap();
        let cur = poisson_nll(&x, &m, &a).unwrap();
        assert!(cur <= prev + 1e-9 * prev.abs(), "{cur} > {prev}");
        prev = cur;
    }
}

#[test]
fn map_em_tends_to_em_as_beta_vanishes() {
    let (a, m, x) = problem(5);
    let u = Image::new(N, N, vec![7.0; N * N]).unwrap();
    let em = em_step(&x, &m, &a).unwrap();
    let map = map_em_step(&x, &u, 1e-12, &m, &a).unwrap();
    for (p, q) in em.as_slice().iter().zip(map.as_slice()) {
        assert!((p - q).abs() <= 1e-9 * p.abs().max(1e-3));
    }
}

#[test]
fn map_em_rejects_nonpositive_beta() {
    let (a, m, x) = problem(1);
    assert!(map_em_step(&x, &x, 0.0, &m, &a).is_err());
    assert!(map_em_step(&x, &x, f64::NAN, &m, &a).is_err());
}

#[test]
fn fit_scale_is_stationary() {
    let (a, m, _) = problem(9);
    let v = Image::new(N, N, (0..N * N).map(|j| 0.5 + (j % 5) as f64 * 0.1).collect()).unwrap();
    let fit = fit_scale(&v, &m, &a).unwrap();
    assert!(fit.s > 0.0);
    let g = scale_gradient(&v, fit.s, &m, &a).unwrap();
    let total: f64 = m.y.iter().map(|&y| y as f64).sum();
    assert!(g.abs() <= 1e-8 * total, "gradient {g} at s = {}", fit.s);
    let f = |s: f64| poisson_nll(&v.map(|x| x * s), &m, &a).unwrap();
    assert!(f(fit.s) <= f(fit.s * 1.01) && f(fit.s) <= f(fit.s * 0.99));
}

#[test]
fn nlm_gradient_matches_finite_differences() {
    let cfg = NlmConfig {
        beta: 0.7,
        sigma_f: 0.5,
        patch: 3,
        search: 5,
        ..NlmConfig::default()
    };
    let reg = NlmRegularizer::new(6, 6, &cfg).unwrap();
    let x = Image::new(6, 6, (0..36).map(|j| ((j * 7) % 11) as f64 * 0.3 + 0.1).collect()).unwrap();
    let g = reg.gradient(&x).unwrap();
    let h = 1e-6;
    for j in 0..36 {
        let mut p = x.clone();
        let mut q = x.clone();
        p.as_mut_slice()[j] += h;
        q.as_mut_slice()[j] -= h;
        let fd = (reg.value(&p).unwrap() - reg.value(&q).unwrap()) / (2.0 * h);
        let ga = g.as_slice()[j];
        assert!((fd - ga).abs() <= 1e-6 * ga.abs().max(1e-3), "voxel {j}: {ga} vs {fd}");
    }
}

#[test]
fn nlm_vanishes_on_zero_image() {
    let cfg = NlmConfig {
        beta: 1.0,
        ..NlmConfig::default()
    };
    let reg = NlmRegularizer::new(8, 8, &cfg).unwrap();
    // Zero-padded patches differ near the border, so only the interior
    // pairs vanish; a zero image is flat everywhere.
    let x = Image::new(8, 8, vec![0.0; 64]).unwrap();
    assert_eq!(reg.value(&x).unwrap(), 0.0);
    assert!(reg.gradient(&x).unwrap().as_slice().iter().all(|&g| g == 0.0));
}
