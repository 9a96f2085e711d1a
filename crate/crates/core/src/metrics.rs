//! Image-quality figures of merit over region masks.
//!
//! All percentages are returned in percent units (a value of `12.5` means
//! 12.5 %). Masks are lists of voxel indices; ordering never matters.

use crate::error::{Error, Result};
use crate::image::Image;

/// Voxel masks for one phantom.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionSet {
    /// Reconstruction field of view; contains every other mask.
    pub fov: Vec<usize>,
    /// Uniform warm background (the "liver"), with all hot/cold regions removed.
    pub background: Vec<usize>,
    /// Union of cold regions.
    pub cold: Vec<usize>,
    /// One mask per hot region.
    pub hot: Vec<Vec<usize>>,
    /// Union of the hot regions.
    pub lesion: Vec<usize>,
    /// True hot-to-background concentration ratio, when hot regions exist.
    pub true_ratio: Option<f64>,
}

impl RegionSet {
    /// Checks disjointness of lesion/cold against the background and that the
    /// field of view contains every other mask.
    pub fn validate(&self, n_voxels: usize) -> Result<()> {
        let mut in_fov = vec![false; n_voxels];
        for &j in &self.fov {
            if j >= n_voxels {
                return Err(Error::invalid(format!("fov voxel {j} out of range")));
            }
            in_fov[j] = true;
        }
        let mut in_bkg = vec![false; n_voxels];
        for &j in &self.background {
            if j >= n_voxels || !in_fov[j] {
                return Err(Error::invalid("background mask leaves the field of view"));
            }
            in_bkg[j] = true;
        }
        for (name, mask) in [("cold", &self.cold), ("lesion", &self.lesion)]
            .into_iter()
            .chain(self.hot.iter().map(|m| ("hot", m)))
        {
            for &j in mask {
                if j >= n_voxels || !in_fov[j] {
                    return Err(Error::invalid(format!("{name} mask leaves the field of view")));
                }
                if in_bkg[j] {
                    return Err(Error::invalid(format!("{name} mask overlaps the background")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastKind {
    Cold,
    Hot,
}

/// Figures of merit for one reconstruction. Fields that need a mask (or a
/// realization set) the caller did not supply are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub cr_cold: Option<f64>,
    pub cr_hot: Option<f64>,
    pub noise: Option<f64>,
    pub rmse: f64,
    pub cnr: Option<f64>,
    pub fov_bias: f64,
}

fn mask_mean(x: &Image, mask: &[usize], what: &str) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid(format!("{what} mask is empty")));
    }
    let v = x.as_slice();
    Ok(mask.iter().map(|&j| v[j]).sum::<f64>() / mask.len() as f64)
}

/// Contrast recovery of the cold region (`kind = Cold`) or of the lesion
/// union (`kind = Hot`) relative to the background.
pub fn contrast_recovery(x: &Image, regions: &RegionSet, kind: ContrastKind) -> Result<f64> {
    let c_bkg = mask_mean(x, &regions.background, "background")?;
    if c_bkg == 0.0 {
        return Err(Error::Degenerate("background mean is zero".into()));
    }
    match kind {
        ContrastKind::Cold => {
            let c_voi = mask_mean(x, &regions.cold, "cold")?;
            Ok((1.0 - c_voi / c_bkg) * 100.0)
        }
        ContrastKind::Hot => {
            let c_voi = mask_mean(x, &regions.lesion, "lesion")?;
            let r_true = regions
                .true_ratio
                .ok_or_else(|| Error::invalid("hot contrast recovery needs a true ratio"))?;
            if r_true == 1.0 {
                return Err(Error::invalid("true ratio of 1 makes hot contrast recovery undefined"));
            }
            Ok((c_voi / c_bkg - 1.0) / (r_true - 1.0) * 100.0)
        }
    }
}

/// Root mean square over the background ("liver") of the per-voxel sample
/// standard deviation across realizations, relative to the true background
/// mean, in percent.
pub fn noise_across_realizations(
    realizations: &[Image],
    truth: &Image,
    liver: &[usize],
) -> Result<f64> {
    let m = realizations.len();
    if m < 2 {
        return Err(Error::invalid(format!("noise needs at least 2 realizations (got {m})")));
    }
    for x in realizations {
        truth.same_shape(x)?;
    }
    let true_mean = mask_mean(truth, liver, "liver")?;
    if true_mean == 0.0 {
        return Err(Error::Degenerate("true liver mean is zero".into()));
    }
    let mut acc = 0.0;
    for &j in liver {
        let mean = realizations.iter().map(|x| x.as_slice()[j]).sum::<f64>() / m as f64;
        let var = realizations
            .iter()
            .map(|x| (x.as_slice()[j] - mean).powi(2))
            .sum::<f64>()
            / (m - 1) as f64;
        acc += var;
    }
    Ok((acc / liver.len() as f64).sqrt() / true_mean * 100.0)
}

/// `sqrt(Σ_fov (truth - x)² / J_fov) × 100`.
pub fn rmse(x: &Image, truth: &Image, fov: &[usize]) -> Result<f64> {
    truth.same_shape(x)?;
    if fov.is_empty() {
        return Err(Error::invalid("fov mask is empty"));
    }
    let (xs, ts) = (x.as_slice(), truth.as_slice());
    let sse: f64 = fov.iter().map(|&j| (ts[j] - xs[j]).powi(2)).sum();
    Ok((sse / fov.len() as f64).sqrt() * 100.0)
}

/// Contrast-to-noise ratio of the lesion union against the background, with
/// the background spread measured by the unbiased sample standard deviation.
pub fn cnr(x: &Image, regions: &RegionSet) -> Result<f64> {
    let bkg = &regions.background;
    if bkg.len() < 2 {
        return Err(Error::invalid("background mask needs at least 2 voxels"));
    }
    let c_bkg = mask_mean(x, bkg, "background")?;
    let c_lesion = mask_mean(x, &regions.lesion, "lesion")?;
    let v = x.as_slice();
    let var = bkg.iter().map(|&j| (v[j] - c_bkg).powi(2)).sum::<f64>() / (bkg.len() - 1) as f64;
    if var == 0.0 {
        return Err(Error::Degenerate("background standard deviation is zero".into()));
    }
    Ok((c_lesion - c_bkg) / var.sqrt())
}

/// Total-activity bias over the field of view, in percent.
pub fn fov_bias(x: &Image, truth: &Image, fov: &[usize]) -> Result<f64> {
    truth.same_shape(x)?;
    let (xs, ts) = (x.as_slice(), truth.as_slice());
    let total_true: f64 = fov.iter().map(|&j| ts[j]).sum();
    if total_true == 0.0 {
        return Err(Error::Degenerate("true activity in the field of view is zero".into()));
    }
    let total_est: f64 = fov.iter().map(|&j| xs[j]).sum();
    Ok((total_est - total_true) / total_true * 100.0)
}

/// Every single-image metric the region set supports. `noise` is left empty;
/// it is a property of a realization set (see [`noise_across_realizations`]).
pub fn evaluate(x: &Image, truth: &Image, regions: &RegionSet) -> Result<MetricsReport> {
    let cr_cold = if regions.cold.is_empty() {
        None
    } else {
        Some(contrast_recovery(x, regions, ContrastKind::Cold)?)
    };
    let cr_hot = match (regions.lesion.is_empty(), regions.true_ratio) {
        (false, Some(r)) if r != 1.0 => Some(contrast_recovery(x, regions, ContrastKind::Hot)?),
        _ => None,
    };
    let cnr = if regions.lesion.is_empty() {
        None
    } else {
        match cnr(x, regions) {
            Ok(v) => Some(v),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(MetricsReport {
        cr_cold,
        cr_hot,
        noise: None,
        rmse: rmse(x, truth, &regions.fov)?,
        cnr,
        fov_bias: fov_bias(x, truth, &regions.fov)?,
    })
}
