//! Synthetic ellipse phantoms and Poisson measurement simulation.
//!
//! Ellipse coordinates are normalized to the grid: `(0, 0)` is the grid
//! center and `±1` the half-width of the grid along each axis, so a phantom
//! description does not depend on the voxel count.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};
use crate::metrics::RegionSet;
use crate::projector::{Geometry, SystemModel};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    #[serde(default)]
    pub rotation_deg: f64,
}

impl Ellipse {
    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            center: [cx, cy],
            semi_axes: [r, r],
            rotation_deg: 0.0,
        }
    }

    /// Normalized voxel-center membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let u = (dx * c + dy * s) / self.semi_axes[0];
        let v = (-dx * s + dy * c) / self.semi_axes[1];
        u * u + v * v <= 1.0
    }

    fn mask(&self, g: &Geometry) -> Vec<usize> {
        let hx = 0.5 * g.nx as f64 * g.voxel_size;
        let hy = 0.5 * g.ny as f64 * g.voxel_size;
        let mut out = Vec::new();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let (x, y) = g.voxel_center(ix, iy);
                if self.contains(x / hx, y / hy) {
                    out.push(iy * g.nx + ix);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Hot,
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub shape: Ellipse,
    /// Activity relative to the background level.
    pub level_ratio: f64,
    pub kind: RegionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub background: Ellipse,
    pub background_level: f64,
    #[serde(default)]
    pub regions: Vec<Region>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_level > 0.0 && self.background_level.is_finite()) {
            return Err(Error::invalid("background_level must be positive"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            let ok = match r.kind {
                RegionKind::Hot => r.level_ratio > 1.0,
                RegionKind::Cold => (0.0..1.0).contains(&r.level_ratio),
            };
            if !ok || !r.level_ratio.is_finite() {
                return Err(Error::invalid(format!(
                    "region {i}: {:?} region has level ratio {}",
                    r.kind, r.level_ratio
                )));
            }
        }
        Ok(())
    }

    /// Elliptical body with two 9:1 hot lesions and a cold region.
    pub fn preset_train() -> Self {
        Self {
            background: Ellipse {
                center: [0.0, 0.0],
                semi_axes: [0.85, 0.65],
                rotation_deg: 0.0,
            },
            background_level: 1.0,
            regions: vec![
                Region {
                    shape: Ellipse::circle(-0.4, 0.1, 0.16),
                    level_ratio: 9.0,
                    kind: RegionKind::Hot,
                },
                Region {
                    shape: Ellipse::circle(0.35, -0.2, 0.12),
                    level_ratio: 9.0,
                    kind: RegionKind::Hot,
                },
                Region {
                    shape: Ellipse::circle(0.15, 0.3, 0.16),
                    level_ratio: 0.0,
                    kind: RegionKind::Cold,
                },
            ],
        }
    }

    /// A differently shaped body with 4:1 lesions, for shifted testing.
    pub fn preset_test() -> Self {
        Self {
            background: Ellipse {
                center: [0.0, 0.05],
                semi_axes: [0.75, 0.7],
                rotation_deg: 20.0,
            },
            background_level: 1.0,
            regions: vec![
                Region {
                    shape: Ellipse::circle(0.3, 0.25, 0.14),
                    level_ratio: 4.0,
                    kind: RegionKind::Hot,
                },
                Region {
                    shape: Ellipse {
                        center: [-0.1, -0.35],
                        semi_axes: [0.18, 0.1],
                        rotation_deg: 30.0,
                    },
                    level_ratio: 4.0,
                    kind: RegionKind::Hot,
                },
                Region {
                    shape: Ellipse::circle(-0.35, 0.15, 0.15),
                    level_ratio: 0.0,
                    kind: RegionKind::Cold,
                },
            ],
        }
    }
}

/// Rasterizes the phantom and builds the exact region masks used by metrics.
///
/// Later regions overwrite earlier ones where they overlap. The true ratio in
/// the returned [`RegionSet`] is the level ratio of the first hot region.
pub fn make_phantom(spec: &PhantomSpec, g: &Geometry) -> Result<(Image, RegionSet)> {
    g.validate()?;
    spec.validate()?;
    let fov = g.fov_mask();
    let mut in_fov = vec![false; g.n_voxels()];
    for &j in &fov {
        in_fov[j] = true;
    }
    let bkg = spec.background.mask(g);
    if bkg.is_empty() {
        return Err(Error::invalid("background ellipse covers no voxel centers"));
    }
    if bkg.iter().any(|&j| !in_fov[j]) {
        return Err(Error::invalid("background ellipse extends outside the field of view"));
    }
    let mut in_bkg = vec![false; g.n_voxels()];
    for &j in &bkg {
        in_bkg[j] = true;
    }

    let mut values = vec![0.0; g.n_voxels()];
    for &j in &bkg {
        values[j] = spec.background_level;
    }
    let mut owner: Vec<Option<usize>> = vec![None; g.n_voxels()];
    for (i, r) in spec.regions.iter().enumerate() {
        let m = r.shape.mask(g);
        if m.is_empty() {
            return Err(Error::invalid(format!("region {i} covers no voxel centers")));
        }
        if m.iter().any(|&j| !in_bkg[j]) {
            return Err(Error::invalid(format!(
                "region {i} extends outside the background support"
            )));
        }
        for j in m {
            values[j] = spec.background_level * r.level_ratio;
            owner[j] = Some(i);
        }
    }

    let mut regions = RegionSet {
        fov,
        hot: vec![Vec::new(); spec.regions.iter().filter(|r| r.kind == RegionKind::Hot).count()],
        true_ratio: spec
            .regions
            .iter()
            .find(|r| r.kind == RegionKind::Hot)
            .map(|r| r.level_ratio),
        ..Default::default()
    };
    let hot_slot: Vec<Option<usize>> = spec
        .regions
        .iter()
        .scan(0usize, |next, r| {
            Some(if r.kind == RegionKind::Hot {
                *next += 1;
                Some(*next - 1)
            } else {
                None
            })
        })
        .collect();
    for &j in &bkg {
        match owner[j] {
            None => regions.background.push(j),
            Some(i) => match spec.regions[i].kind {
                RegionKind::Cold => regions.cold.push(j),
                RegionKind::Hot => {
                    regions.hot[hot_slot[i].unwrap()].push(j);
                    regions.lesion.push(j);
                }
            },
        }
    }
    // A hot region completely overwritten by later regions leaves an empty mask.
    regions.hot.retain(|m| !m.is_empty());
    Ok((Image::new(g.nx, g.ny, values)?, regions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub phantom: PhantomSpec,
    pub total_net_trues: f64,
    pub random_fraction: f64,
    pub n_realizations: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if !(self.total_net_trues > 0.0 && self.total_net_trues.is_finite()) {
            return Err(Error::invalid(format!(
                "total_net_trues must be positive (got {})",
                self.total_net_trues
            )));
        }
        if !(0.0..1.0).contains(&self.random_fraction) {
            return Err(Error::invalid(format!(
                "random_fraction must lie in [0, 1) (got {})",
                self.random_fraction
            )));
        }
        if self.n_realizations == 0 {
            return Err(Error::invalid("n_realizations must be >= 1"));
        }
        Ok(())
    }

    /// Total expected randoms `trues · RF / (1 − RF)`.
    pub fn total_randoms(&self) -> f64 {
        self.total_net_trues * self.random_fraction / (1.0 - self.random_fraction)
    }
}

/// Integer counts `y` with the known mean background `r̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    n_angles: usize,
    n_bins: usize,
    pub y: Vec<u64>,
    pub r_bar: Vec<f64>,
}

impl Measurement {
    pub fn new(n_angles: usize, n_bins: usize, y: Vec<u64>, r_bar: Vec<f64>) -> Result<Self> {
        let n = n_angles * n_bins;
        if y.len() != n || r_bar.len() != n {
            return Err(Error::mismatch(
                format!("{n} rays"),
                format!("{} counts and {} background values", y.len(), r_bar.len()),
            ));
        }
        if r_bar.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::invalid("mean background must be finite and nonnegative"));
        }
        Ok(Self {
            n_angles,
            n_bins,
            y,
            r_bar,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_angles, self.n_bins)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| v as f64).collect()
    }

    pub fn r_bar_sinogram(&self) -> Sinogram {
        Sinogram::new(self.n_angles, self.n_bins, self.r_bar.clone()).unwrap()
    }

    pub fn check_model<A: SystemModel + ?Sized>(&self, a: &A) -> Result<()> {
        if a.sinogram_shape() != self.shape() {
            return Err(Error::mismatch(
                format!("{:?} sinogram", a.sinogram_shape()),
                format!("{:?} measurement", self.shape()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// Phantom rescaled so that its projection sums to the requested trues.
    pub truth: Image,
    /// Noise-free true-coincidence means `A x_true`.
    pub trues_mean: Sinogram,
    pub measurements: Vec<Measurement>,
}

/// Draws one Poisson variate; `mean = 0` gives 0.
pub fn sample_poisson<R: rand::Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    d.sample(rng) as u64
}

/// Scales `x_true` to the requested count level and draws independent
/// realizations `y_m ~ Poisson(A x_true + r̄)` with a uniform background set
/// to hit the requested random fraction.
pub fn simulate_measurement<A: SystemModel + ?Sized>(
    x_true: &Image,
    a: &A,
    s: &ScenarioSpec,
) -> Result<Simulation> {
    s.validate()?;
    let t = a.forward(x_true)?;
    let total = t.sum();
    if !(total > 0.0) {
        return Err(Error::invalid(
            "phantom projects to zero counts; cannot reach a positive trues level",
        ));
    }
    let scale = s.total_net_trues / total;
    let truth = x_true.scaled(scale);
    let trues_mean = a.forward(&truth)?;
    let n_rays = trues_mean.len();
    let r_level = s.total_randoms() / n_rays as f64;
    let r_bar = vec![r_level; n_rays];
    let (na, nb) = a.sinogram_shape();

    let measurements = (0..s.n_realizations)
        .map(|m| {
            let mut rng = rng::stream(s.seed, Purpose::Measurement, m as u64);
            let y = trues_mean
                .as_slice()
                .iter()
                .zip(&r_bar)
                .map(|(&t, &r)| sample_poisson(t + r, &mut rng))
                .collect();
            Measurement::new(na, nb, y, r_bar.clone())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Simulation {
        truth,
        trues_mean,
        measurements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::Projector;

    fn geometry() -> Geometry {
        Geometry::square(24, 16)
    }

    fn base_spec() -> PhantomSpec {
        PhantomSpec {
            background: Ellipse {
                center: [0.0, 0.0],
                semi_axes: [0.8, 0.6],
                rotation_deg: 0.0,
            },
            background_level: 1.0,
            regions: vec![],
        }
    }

    fn scenario(trues: f64, rf: f64, m: usize) -> ScenarioSpec {
        ScenarioSpec {
            phantom: base_spec(),
            total_net_trues: trues,
            random_fraction: rf,
            n_realizations: m,
            seed: 42,
        }
    }

    #[test]
    fn no_regions_gives_uniform_ellipse() {
        let g = geometry();
        let (x, r) = make_phantom(&base_spec(), &g).unwrap();
        for (j, &v) in x.as_slice().iter().enumerate() {
            assert!(v == 0.0 || v == 1.0);
            assert_eq!(v == 1.0, r.background.contains(&j));
        }
        assert!(r.cold.is_empty() && r.lesion.is_empty() && r.true_ratio.is_none());
    }

    #[test]
    fn zero_ratio_cold_region_is_empty_of_activity() {
        let mut spec = base_spec();
        spec.regions.push(Region {
            shape: Ellipse::circle(0.2, 0.0, 0.2),
            level_ratio: 0.0,
            kind: RegionKind::Cold,
        });
        let (x, r) = make_phantom(&spec, &geometry()).unwrap();
        assert!(!r.cold.is_empty());
        assert!(r.cold.iter().all(|&j| x.as_slice()[j] == 0.0));
        r.validate(x.len()).unwrap();
    }

    #[test]
    fn nine_to_one_hot_region() {
        let mut spec = base_spec();
        spec.background_level = 0.37;
        spec.regions.push(Region {
            shape: Ellipse::circle(-0.3, 0.1, 0.15),
            level_ratio: 9.0,
            kind: RegionKind::Hot,
        });
        let (x, r) = make_phantom(&spec, &geometry()).unwrap();
        assert_eq!(x.max() / 0.37, 9.0);
        assert_eq!(r.true_ratio, Some(9.0));
        assert_eq!(r.hot.len(), 1);
    }

    #[test]
    fn region_outside_background_rejected() {
        let mut spec = base_spec();
        spec.regions.push(Region {
            shape: Ellipse::circle(0.75, 0.0, 0.2),
            level_ratio: 2.0,
            kind: RegionKind::Hot,
        });
        assert!(make_phantom(&spec, &geometry()).is_err());
    }

    #[test]
    fn mislabeled_region_rejected() {
        let mut spec = base_spec();
        spec.regions.push(Region {
            shape: Ellipse::circle(0.0, 0.0, 0.2),
            level_ratio: 0.5,
            kind: RegionKind::Hot,
        });
        assert!(make_phantom(&spec, &geometry()).is_err());
    }

    #[test]
    fn table_one_training_randoms() {
        // RF = 0.909 and 2e5 trues: randoms = 2e5 · 0.909 / 0.091.
        let s = scenario(2e5, 0.909, 1);
        assert!((s.total_randoms() - 1.998e6).abs() / 1.998e6 < 1e-3);
    }

    #[test]
    fn achieved_random_fraction_and_trues() {
        let g = geometry();
        let p = Projector::new(g).unwrap();
        let (x, _) = make_phantom(&base_spec(), &g).unwrap();
        let s = scenario(5e5, 0.875, 2);
        let sim = simulate_measurement(&x, &p, &s).unwrap();
        let trues = p.forward(&sim.truth).unwrap().sum();
        assert!((trues - 5e5).abs() / 5e5 < 1e-10);
        let randoms: f64 = sim.measurements[0].r_bar.iter().sum();
        let rf = randoms / (randoms + sim.trues_mean.sum());
        assert!((rf - 0.875).abs() < 1e-12);
    }

    #[test]
    fn zero_phantom_with_positive_trues_errors() {
        let g = geometry();
        let p = Projector::new(g).unwrap();
        let s = scenario(1e3, 0.0, 1);
        assert!(simulate_measurement(&Image::zeros(24, 24), &p, &s).is_err());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        assert!(scenario(0.0, 0.5, 1).validate().is_err());
        assert!(scenario(1.0, 1.0, 1).validate().is_err());
        assert!(scenario(1.0, -0.1, 1).validate().is_err());
        assert!(scenario(1.0, 0.1, 0).validate().is_err());
    }

    #[test]
    fn seeded_determinism() {
        let g = geometry();
        let p = Projector::new(g).unwrap();
        let (x, _) = make_phantom(&base_spec(), &g).unwrap();
        let s = scenario(1e4, 0.5, 3);
        let a = simulate_measurement(&x, &p, &s).unwrap();
        let b = simulate_measurement(&x, &p, &s).unwrap();
        assert_eq!(a.measurements, b.measurements);
        assert_ne!(a.measurements[0].y, a.measurements[1].y);
    }

    #[test]
    fn poisson_mean_within_three_standard_errors() {
        let g = geometry();
        let p = Projector::new(g).unwrap();
        let (x, _) = make_phantom(&base_spec(), &g).unwrap();
        let s = scenario(2e4, 0.6, 1000);
        let sim = simulate_measurement(&x, &p, &s).unwrap();
        let ray = sim
            .trues_mean
            .as_slice()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let mean = sim.trues_mean.as_slice()[ray] + sim.measurements[0].r_bar[ray];
        let emp = sim.measurements.iter().map(|m| m.y[ray] as f64).sum::<f64>() / 1000.0;
        let se = (mean / 1000.0).sqrt();
        assert!((emp - mean).abs() < 3.0 * se, "empirical {emp}, expected {mean}");
    }
}
