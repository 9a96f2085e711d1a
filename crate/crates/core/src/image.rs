//! Voxel grids and projection data.

use crate::error::{Error, Result};

/// A 2-D voxel grid stored row-major (`index = iy * nx + ix`).
///
/// Reconstruction estimates are kept nonnegative by the algorithms that
/// produce them; intermediate quantities such as denoiser outputs may be
/// signed, so the type itself does not enforce a sign.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::mismatch(
                format!("{} voxels ({nx}x{ny})", nx * ny),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { nx, ny, data })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::filled(nx, ny, 0.0)
    }

    pub fn filled(nx: usize, ny: usize, value: f64) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.nx + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: f64) {
        self.data[iy * self.nx + ix] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest value (first occurrence).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = j;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    pub fn check_shape(&self, nx: usize, ny: usize) -> Result<()> {
        if (self.nx, self.ny) != (nx, ny) {
            return Err(Error::mismatch(
                format!("{nx}x{ny} image"),
                format!("{}x{} image", self.nx, self.ny),
            ));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        other.check_shape(self.nx, self.ny)
    }
}

/// Projection data: one value per (angle, detector bin), angle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_angles: usize,
    n_bins: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_angles: usize, n_bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_angles * n_bins {
            return Err(Error::mismatch(
                format!("{} rays ({n_angles}x{n_bins})", n_angles * n_bins),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            n_angles,
            n_bins,
            data,
        })
    }

    pub fn zeros(n_angles: usize, n_bins: usize) -> Self {
        Self::filled(n_angles, n_bins, 0.0)
    }

    pub fn filled(n_angles: usize, n_bins: usize, value: f64) -> Self {
        Self {
            n_angles,
            n_bins,
            data: vec![value; n_angles * n_bins],
        }
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn check_shape(&self, n_angles: usize, n_bins: usize) -> Result<()> {
        if (self.n_angles, self.n_bins) != (n_angles, n_bins) {
            return Err(Error::mismatch(
                format!("{n_angles}x{n_bins} sinogram"),
                format!("{}x{} sinogram", self.n_angles, self.n_bins),
            ));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
