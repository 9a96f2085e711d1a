//! 2-D parallel-beam system model.
//!
//! The forward operator is pixel driven: every voxel center is projected onto
//! the detector at each angle and its footprint weight `voxel_size² / bin_width`
//! is split between the two nearest bins by linear interpolation. The adjoint
//! walks exactly the same (voxel, bin, weight) triples, so the adjoint identity
//! holds up to floating-point rounding.
//!
//! Angles are uniformly spaced on `[0, π)` and the detector is centered on the
//! grid center. There is no attenuation, normalization or resolution model.
//! Such corrections fit behind the [`SystemModel`] trait: wrap a [`Projector`]
//! and scale rays (or blur voxels) before/after delegating to it.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub nx: usize,
    pub ny: usize,
    pub voxel_size: f64,
    pub n_angles: usize,
    pub n_bins: usize,
    pub bin_width: f64,
}

impl Geometry {
    /// Square grid with a detector wide enough to see every voxel at every
    /// angle (bin width equal to the voxel size).
    pub fn square(n: usize, n_angles: usize) -> Self {
        let diag = (2.0f64).sqrt() * n as f64;
        let n_bins = diag.ceil() as usize + 2;
        Self {
            nx: n,
            ny: n,
            voxel_size: 1.0,
            n_angles,
            n_bins,
            bin_width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.n_angles == 0 || self.n_bins == 0 {
            return Err(Error::invalid(format!(
                "geometry counts must be >= 1 (nx={}, ny={}, n_angles={}, n_bins={})",
                self.nx, self.ny, self.n_angles, self.n_bins
            )));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite())
            || !(self.bin_width > 0.0 && self.bin_width.is_finite())
        {
            return Err(Error::invalid(format!(
                "voxel_size and bin_width must be positive (got {}, {})",
                self.voxel_size, self.bin_width
            )));
        }
        Ok(())
    }

    /// Number of rays, `n_angles * n_bins`.
    pub fn n_rays(&self) -> usize {
        self.n_angles * self.n_bins
    }

    /// Number of voxels, `nx * ny`.
    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn angle(&self, a: usize) -> f64 {
        PI * a as f64 / self.n_angles as f64
    }

    /// Physical coordinates of a voxel center relative to the grid center.
    pub fn voxel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let x = (ix as f64 - (self.nx as f64 - 1.0) / 2.0) * self.voxel_size;
        let y = (iy as f64 - (self.ny as f64 - 1.0) / 2.0) * self.voxel_size;
        (x, y)
    }

    /// Voxels whose center lies inside the circle inscribed in the grid.
    pub fn fov_mask(&self) -> Vec<usize> {
        let radius = 0.5 * (self.nx.min(self.ny) as f64) * self.voxel_size;
        let mut mask = Vec::new();
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (x, y) = self.voxel_center(ix, iy);
                if x * x + y * y <= radius * radius {
                    mask.push(iy * self.nx + ix);
                }
            }
        }
        mask
    }
}

/// A linear system model `A` with its adjoint and column sums.
///
/// Reconstruction code is written against this trait so alternative models
/// (an explicit sparse matrix, a corrected projector) can be swapped in.
pub trait SystemModel {
    fn image_shape(&self) -> (usize, usize);

    fn sinogram_shape(&self) -> (usize, usize);

    /// `A x`
    fn forward(&self, x: &Image) -> Result<Sinogram>;

    /// `Aᵀ s`
    fn back(&self, s: &Sinogram) -> Result<Image>;

    /// Column sums `a_j = Σ_i a_ij`.
    fn sensitivity(&self) -> &Image;

    fn n_voxels(&self) -> usize {
        let (nx, ny) = self.image_shape();
        nx * ny
    }

    fn n_rays(&self) -> usize {
        let (na, nb) = self.sinogram_shape();
        na * nb
    }

    fn zero_image(&self) -> Image {
        let (nx, ny) = self.image_shape();
        Image::zeros(nx, ny)
    }
}

/// Matrix-free pixel-driven parallel-beam projector.
#[derive(Debug)]
pub struct Projector {
    geometry: Geometry,
    trig: Vec<(f64, f64)>,
    sensitivity: OnceLock<Image>,
}

impl Clone for Projector {
    fn clone(&self) -> Self {
        Self {
            geometry: self.geometry,
            trig: self.trig.clone(),
            sensitivity: self.sensitivity.clone(),
        }
    }
}

impl Projector {
    pub fn new(geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        let trig = (0..geometry.n_angles)
            .map(|a| {
                let theta = geometry.angle(a);
                (theta.cos(), theta.sin())
            })
            .collect();
        Ok(Self {
            geometry,
            trig,
            sensitivity: OnceLock::new(),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Calls `visit(ray, voxel, weight)` for every nonzero entry of `A`, in a
    /// fixed order (angle, then voxel, then lower bin before upper bin).
    fn for_each_weight(&self, mut visit: impl FnMut(usize, usize, f64)) {
        let g = &self.geometry;
        let footprint = g.voxel_size * g.voxel_size / g.bin_width;
        let center_bin = (g.n_bins as f64 - 1.0) / 2.0;
        for (a, &(c, s)) in self.trig.iter().enumerate() {
            let ray0 = a * g.n_bins;
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    let (x, y) = g.voxel_center(ix, iy);
                    let u = (x * c + y * s) / g.bin_width + center_bin;
                    let lower = u.floor();
                    let frac = u - lower;
                    let j = iy * g.nx + ix;
                    let b0 = lower as i64;
                    if b0 >= 0 && (b0 as usize) < g.n_bins {
                        let w = footprint * (1.0 - frac);
                        if w != 0.0 {
                            visit(ray0 + b0 as usize, j, w);
                        }
                    }
                    let b1 = b0 + 1;
                    if b1 >= 0 && (b1 as usize) < g.n_bins {
                        let w = footprint * frac;
                        if w != 0.0 {
                            visit(ray0 + b1 as usize, j, w);
                        }
                    }
                }
            }
        }
    }

    /// Builds the explicit sparse matrix. Intended as a cross-check on small
    /// grids; the matrix-free operator is used for reconstruction.
    pub fn to_sparse(&self) -> Result<SparseSystem> {
        let g = &self.geometry;
        if g.nx > 32 || g.ny > 32 {
            return Err(Error::invalid(format!(
                "explicit matrix is limited to grids up to 32x32 (got {}x{})",
                g.nx, g.ny
            )));
        }
        let mut triplets = Vec::new();
        self.for_each_weight(|i, j, w| triplets.push((i, j, w)));
        Ok(SparseSystem::from_triplets(
            (g.nx, g.ny),
            (g.n_angles, g.n_bins),
            triplets,
        ))
    }
}

impl SystemModel for Projector {
    fn image_shape(&self) -> (usize, usize) {
        (self.geometry.nx, self.geometry.ny)
    }

    fn sinogram_shape(&self) -> (usize, usize) {
        (self.geometry.n_angles, self.geometry.n_bins)
    }

    fn forward(&self, x: &Image) -> Result<Sinogram> {
        x.check_shape(self.geometry.nx, self.geometry.ny)?;
        let xs = x.as_slice();
        let mut out = vec![0.0; self.geometry.n_rays()];
        self.for_each_weight(|i, j, w| out[i] += w * xs[j]);
        Sinogram::new(self.geometry.n_angles, self.geometry.n_bins, out)
    }

    fn back(&self, s: &Sinogram) -> Result<Image> {
        s.check_shape(self.geometry.n_angles, self.geometry.n_bins)?;
        let ss = s.as_slice();
        let mut out = vec![0.0; self.geometry.n_voxels()];
        self.for_each_weight(|i, j, w| out[j] += w * ss[i]);
        Image::new(self.geometry.nx, self.geometry.ny, out)
    }

    fn sensitivity(&self) -> &Image {
        self.sensitivity.get_or_init(|| {
            let ones = Sinogram::filled(self.geometry.n_angles, self.geometry.n_bins, 1.0);
            self.back(&ones).expect("shape is consistent by construction")
        })
    }
}

/// `A x` for a parallel-beam geometry.
pub fn forward_project(x: &Image, g: &Geometry) -> Result<Sinogram> {
    Projector::new(*g)?.forward(x)
}

/// `Aᵀ s` for a parallel-beam geometry.
pub fn back_project(s: &Sinogram, g: &Geometry) -> Result<Image> {
    Projector::new(*g)?.back(s)
}

/// Sensitivity image `Aᵀ 1`.
pub fn sensitivity(g: &Geometry) -> Result<Image> {
    Ok(Projector::new(*g)?.sensitivity().clone())
}

/// Explicit system matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    image_shape: (usize, usize),
    sinogram_shape: (usize, usize),
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    sensitivity: Image,
}

impl SparseSystem {
    /// Builds the matrix from `(row, col, weight)` triplets; duplicate
    /// coordinates are summed.
    pub fn from_triplets(
        image_shape: (usize, usize),
        sinogram_shape: (usize, usize),
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        let n_rows = sinogram_shape.0 * sinogram_shape.1;
        let n_cols = image_shape.0 * image_shape.1;
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut weights: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, w) in triplets {
            assert!(i < n_rows && j < n_cols, "triplet ({i}, {j}) out of range");
            if last == Some((i, j)) {
                *weights.last_mut().unwrap() += w;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            cols.push(j);
            weights.push(w);
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut sens = vec![0.0; n_cols];
        for (&j, &w) in cols.iter().zip(&weights) {
            sens[j] += w;
        }
        let sensitivity = Image::new(image_shape.0, image_shape.1, sens).unwrap();
        Self {
            image_shape,
            sinogram_shape,
            row_ptr,
            cols,
            weights,
            sensitivity,
        }
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// Iterates `(row, col, weight)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.row_ptr.len() - 1).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.weights[k]))
        })
    }

    /// Coordinate-list text: one `row col weight` line per nonzero.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        for (i, j, w) in self.entries() {
            writeln!(s, "{i} {j} {w:e}").unwrap();
        }
        s
    }

    pub fn write_coo(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_coo_text()).map_err(|e| Error::io(path, e))
    }
}

impl SystemModel for SparseSystem {
    fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    fn sinogram_shape(&self) -> (usize, usize) {
        self.sinogram_shape
    }

    fn forward(&self, x: &Image) -> Result<Sinogram> {
        x.check_shape(self.image_shape.0, self.image_shape.1)?;
        let xs = x.as_slice();
        let out = (0..self.row_ptr.len() - 1)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.weights[k] * xs[self.cols[k]])
                    .sum()
            })
            .collect();
        Sinogram::new(self.sinogram_shape.0, self.sinogram_shape.1, out)
    }

    fn back(&self, s: &Sinogram) -> Result<Image> {
        s.check_shape(self.sinogram_shape.0, self.sinogram_shape.1)?;
        let ss = s.as_slice();
        let mut out = vec![0.0; self.image_shape.0 * self.image_shape.1];
        for (i, j, w) in self.entries() {
            out[j] += w * ss[i];
        }
        Image::new(self.image_shape.0, self.image_shape.1, out)
    }

    fn sensitivity(&self) -> &Image {
        &self.sensitivity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::new(nx, ny, (0..nx * ny).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zeros_project_to_zeros() {
        let p = Projector::new(Geometry::square(8, 6)).unwrap();
        let s = p.forward(&Image::zeros(8, 8)).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
        let b = p.back(&Sinogram::zeros(6, p.geometry().n_bins)).unwrap();
        assert!(b.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_impulse_single_angle_footprint() {
        // 5x5 grid, unit voxels and bins, one angle (theta = 0): the center
        // voxel projects to u = 0 + (5-1)/2 = 2 exactly, so the whole
        // footprint voxel_size²/bin_width = 1 lands in bin 2.
        let g = Geometry {
            nx: 5,
            ny: 5,
            voxel_size: 1.0,
            n_angles: 1,
            n_bins: 5,
            bin_width: 1.0,
        };
        let mut x = Image::zeros(5, 5);
        x.set(2, 2, 1.0);
        let s = forward_project(&x, &g).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.0]);

        // Half-width bins: footprint 1/0.5 = 2, still centered on bin 2.
        let g = Geometry {
            bin_width: 0.5,
            ..g
        };
        let s = forward_project(&x, &g).unwrap();
        assert_eq!(s.sum(), 2.0);
        assert_eq!(s.as_slice()[2], 2.0);
    }

    #[test]
    fn off_grid_voxel_splits_between_bins() {
        // Voxel (3, 2) sits at x = 1. At 45 degrees its coordinate is
        // cos(pi/4) = 0.7071..., so bins 2 and 3 share the footprint.
        let g = Geometry {
            nx: 5,
            ny: 5,
            voxel_size: 1.0,
            n_angles: 4,
            n_bins: 5,
            bin_width: 1.0,
        };
        let mut x = Image::zeros(5, 5);
        x.set(3, 2, 1.0);
        let s = forward_project(&x, &g).unwrap();
        let row = &s.as_slice()[5..10];
        let f = (PI / 4.0).cos();
        assert!((row[2] - (1.0 - f)).abs() < 1e-15);
        assert!((row[3] - f).abs() < 1e-15);
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Projector::new(Geometry::square(12, 10)).unwrap();
        let x = random_image(12, 12, &mut rng);
        let s1 = p.forward(&x).unwrap();
        let s2 = p.forward(&x.scaled(2.0)).unwrap();
        for (a, b) in s1.as_slice().iter().zip(s2.as_slice()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn adjoint_identity_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Projector::new(Geometry::square(20, 17)).unwrap();
        let (na, nb) = p.sinogram_shape();
        for _ in 0..20 {
            let x = random_image(20, 20, &mut rng);
            let s = Sinogram::new(na, nb, (0..na * nb).map(|_| rng.random::<f64>() - 0.5).collect())
                .unwrap();
            let ax = p.forward(&x).unwrap();
            let ats = p.back(&s).unwrap();
            let lhs = dot(ax.as_slice(), s.as_slice());
            let rhs = dot(x.as_slice(), ats.as_slice());
            let scale = crate::image::norm2(ax.as_slice()) * crate::image::norm2(s.as_slice());
            assert!((lhs - rhs).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn backprojected_impulse_peaks_at_impulse() {
        let g = Geometry::square(9, 12);
        let p = Projector::new(g).unwrap();
        let mut x = Image::zeros(9, 9);
        x.set(4, 4, 1.0);
        let bp = p.back(&p.forward(&x).unwrap()).unwrap();
        assert_eq!(bp.argmax(), 4 * 9 + 4);
    }

    #[test]
    fn sensitivity_is_backprojected_ones() {
        let p = Projector::new(Geometry::square(16, 8)).unwrap();
        let ones = Sinogram::filled(8, p.geometry().n_bins, 1.0);
        assert_eq!(p.sensitivity(), &p.back(&ones).unwrap());
    }

    #[test]
    fn sensitivity_positive_inside_fov() {
        let g = Geometry::square(16, 8);
        let a = sensitivity(&g).unwrap();
        for j in g.fov_mask() {
            assert!(a.as_slice()[j] > 0.0);
        }
    }

    #[test]
    fn doubling_angles_doubles_interior_sensitivity() {
        let g = Geometry::square(16, 10);
        let a1 = sensitivity(&g).unwrap();
        let a2 = sensitivity(&Geometry { n_angles: 20, ..g }).unwrap();
        for j in g.fov_mask() {
            let ratio = a2.as_slice()[j] / a1.as_slice()[j];
            assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio} at voxel {j}");
        }
    }

    #[test]
    fn sparse_matrix_matches_matrix_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Projector::new(Geometry::square(10, 7)).unwrap();
        let m = p.to_sparse().unwrap();
        let x = random_image(10, 10, &mut rng);
        let a = p.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in p.sensitivity().as_slice().iter().zip(m.sensitivity().as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
        let lines = m.to_coo_text().lines().count();
        assert_eq!(lines, m.nnz());
    }

    #[test]
    fn sparse_build_rejects_large_grids() {
        let p = Projector::new(Geometry::square(40, 4)).unwrap();
        assert!(p.to_sparse().is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = Projector::new(Geometry::square(8, 4)).unwrap();
        assert!(matches!(
            p.forward(&Image::zeros(7, 8)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(p.back(&Sinogram::zeros(3, 3)).is_err());
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut g = Geometry::square(8, 4);
        g.bin_width = 0.0;
        assert!(Projector::new(g).is_err());
        let mut g = Geometry::square(8, 4);
        g.n_angles = 0;
        assert!(Projector::new(g).is_err());
    }
}
