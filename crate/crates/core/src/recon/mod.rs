//! Reconstruction algorithms: MLEM, BCD-Net, and the TV and NLM baselines.
//!
//! Every algorithm returns its final image together with a [`ReconTrace`]
//! holding all iterates, so metric-versus-iteration curves can be produced
//! after the fact.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{self, RegionSet};
use crate::phantom::Measurement;
use crate::projector::SystemModel;

mod bcdnet;
mod em;
mod nlm;
mod scaling;
mod tv;

pub use bcdnet::{bcd_net_reconstruct, bcd_outer_step, BcdState};
pub use em::{
    em_backprojection, em_step, map_em_root, map_em_step, mean_measurement, poisson_gradient,
    poisson_nll, EmSurrogate,
};
pub use nlm::{fair_potential, fair_potential_derivative, nlm_admm_reconstruct, NlmRegularizer};
pub use scaling::{adaptive_beta, fit_scale, normalize_g1, scale_g2, scale_gradient, ScaleFit};
pub use tv::{finite_diff, finite_diff_adjoint, operator_norm_estimate, total_variation, tv_pdhg_reconstruct};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Em,
    Bcdnet,
    TvPdhg,
    NlmAdmm,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Em => "em",
            Algorithm::Bcdnet => "bcdnet",
            Algorithm::TvPdhg => "tv_pdhg",
            Algorithm::NlmAdmm => "nlm_admm",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(Algorithm::Em),
            "bcdnet" => Ok(Algorithm::Bcdnet),
            "tv_pdhg" | "tv-pdhg" => Ok(Algorithm::TvPdhg),
            "nlm_admm" | "nlm-admm" => Ok(Algorithm::NlmAdmm),
            _ => Err(Error::Config(format!(
                "unknown algorithm '{s}' (expected em, bcdnet, tv_pdhg or nlm_admm)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvConfig {
    pub beta: f64,
    /// Dual step; defaults to `0.99 / ‖[A; C]‖`.
    pub sigma: Option<f64>,
    /// Primal step; defaults to `0.99 / ‖[A; C]‖`.
    pub tau: Option<f64>,
    pub power_iterations: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            sigma: None,
            tau: None,
            power_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmConfig {
    pub beta: f64,
    pub sigma_f: f64,
    /// Patch side (odd); `N_f = patch²`.
    pub patch: usize,
    /// Search window side (odd).
    pub search: usize,
    /// Initial penalty; defaults to `mean(a) / mean(x⁽⁰⁾)`.
    pub rho: Option<f64>,
    pub x_steps: usize,
    pub v_steps: usize,
    /// Residual-balancing ratio.
    pub mu: f64,
    /// Penalty change factor.
    pub rho_factor: f64,
    /// Over-relaxation factor in `(0, 2)`; 1 is plain ADMM.
    pub relaxation: f64,
}

impl Default for NlmConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            sigma_f: 1.0,
            patch: 3,
            search: 7,
            rho: None,
            x_steps: 10,
            v_steps: 5,
            mu: 10.0,
            rho_factor: 2.0,
            relaxation: 1.8,
        }
    }
}

impl NlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::invalid(format!("sigma_f must be positive (got {})", self.sigma_f)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("NLM beta must be nonnegative"));
        }
        if self.patch % 2 == 0 || self.search % 2 == 0 {
            return Err(Error::invalid("patch and search sizes must be odd"));
        }
        if self.x_steps == 0 || self.v_steps == 0 {
            return Err(Error::invalid("NLM sub-step counts must be at least 1"));
        }
        if !(self.mu > 1.0) || !(self.rho_factor > 1.0) {
            return Err(Error::invalid("penalty balancing needs mu > 1 and rho_factor > 1"));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::invalid("relaxation must lie in (0, 2)"));
        }
        if let Some(r) = self.rho {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("rho must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub algorithm: Algorithm,
    /// Outer iterations `T` for the regularized algorithms.
    pub iterations: usize,
    /// Inner MAP-EM iterations `T'` per outer iteration.
    pub inner_iterations: usize,
    /// Balance constant of the adaptive β rule.
    pub c: f64,
    /// EM iterations used to form `x⁽⁰⁾`.
    pub n_em_init: usize,
    /// Iterations when `algorithm = em`.
    pub em_iterations: usize,
    /// Overrides the adaptive rule with a constant β.
    pub beta_fixed: Option<f64>,
    /// Compute β once from `(x⁽⁰⁾, u⁽¹⁾)` and keep it.
    pub freeze_beta: bool,
    pub tv: TvConfig,
    pub nlm: NlmConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Em,
            iterations: 30,
            inner_iterations: 1,
            c: 0.01,
            n_em_init: 10,
            em_iterations: 40,
            beta_fixed: None,
            freeze_beta: false,
            tv: TvConfig::default(),
            nlm: NlmConfig::default(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.inner_iterations == 0 || self.n_em_init == 0 || self.em_iterations == 0 {
            return Err(Error::invalid("iteration counts must be at least 1"));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("c must be positive (got {})", self.c)));
        }
        if let Some(b) = self.beta_fixed {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("beta_fixed must be nonnegative (got {b})")));
            }
        }
        if !(self.tv.beta >= 0.0 && self.tv.beta.is_finite()) {
            return Err(Error::invalid("TV beta must be nonnegative"));
        }
        for s in [self.tv.sigma, self.tv.tau].into_iter().flatten() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("PDHG step sizes must be positive"));
            }
        }
        self.nlm.validate()
    }
}

/// Per-iteration record of a reconstruction. Index 0 is the starting image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconTrace {
    pub snapshots: Vec<Image>,
    pub nll: Vec<f64>,
    /// Data fit plus regularizer, where the algorithm has one.
    pub objective: Vec<f64>,
    pub beta: Vec<Option<f64>>,
    /// BCD-Net only: the rescaled denoiser outputs `g2(u⁽ⁿ⁾)`, `n = 1…T`.
    pub targets: Vec<Image>,
    /// NLM-ADMM only: `(primal, dual)` residual norms per iteration.
    pub residuals: Vec<(f64, f64)>,
}

impl ReconTrace {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn last(&self) -> Option<&Image> {
        self.snapshots.last()
    }

    fn push(&mut self, x: Image, nll: f64, objective: f64, beta: Option<f64>) {
        self.snapshots.push(x);
        self.nll.push(nll);
        self.objective.push(objective);
        self.beta.push(beta);
    }

    /// CSV with columns `iteration,nll,objective,beta,rmse,cnr,noise`.
    /// Metric columns are filled when a truth image and regions are given;
    /// `noise` needs several realizations and is left empty here.
    pub fn to_csv(&self, truth: Option<(&Image, &RegionSet)>) -> Result<String> {
        let mut out = String::from("iteration,nll,objective,beta,rmse,cnr,noise\n");
        for (n, x) in self.snapshots.iter().enumerate() {
            let (rmse, cnr) = match truth {
                Some((t, r)) => {
                    let rep = metrics::evaluate(x, t, r)?;
                    (Some(rep.rmse), rep.cnr)
                }
                None => (None, None),
            };
            writeln!(
                out,
                "{n},{},{},{},{},{},",
                self.nll[n],
                self.objective[n],
                crate::io::csv_opt(self.beta[n]),
                crate::io::csv_opt(rmse),
                crate::io::csv_opt(cnr),
            )
            .expect("writing to a String");
        }
        Ok(out)
    }
}

/// Uniform start on the voxels the scanner sees, scaled so that its
/// projection matches the net counts `Σy − Σr̄`.
pub fn uniform_start<A: SystemModel + ?Sized>(m: &Measurement, a: &A) -> Result<Image> {
    m.check_model(a)?;
    let sens = a.sensitivity();
    let total_y: f64 = m.y.iter().map(|&y| y as f64).sum();
    let total_r: f64 = m.r_bar.iter().sum();
    let net = (total_y - total_r).max(1e-3 * total_y);
    let support_sens: f64 = sens.as_slice().iter().filter(|&&s| s > 0.0).sum();
    if !(net > 0.0) || !(support_sens > 0.0) {
        return Err(Error::Degenerate("measurement has no counts to start from".into()));
    }
    let level = net / support_sens;
    Ok(sens.map(|s| if s > 0.0 { level } else { 0.0 }))
}

/// Plain MLEM for `iterations` steps from [`uniform_start`].
pub fn em_reconstruct<A: SystemModel + ?Sized>(
    m: &Measurement,
    a: &A,
    iterations: usize,
) -> Result<(Image, ReconTrace)> {
    let mut x = uniform_start(m, a)?;
    let mut trace = ReconTrace::default();
    let f = poisson_nll(&x, m, a)?;
    trace.push(x.clone(), f, f, None);
    for _ in 0..iterations {
        x = em_step(&x, m, a)?;
        let f = poisson_nll(&x, m, a)?;
        trace.push(x.clone(), f, f, None);
    }
    Ok((x, trace))
}

/// `x⁽⁰⁾` for the regularized algorithms: `n_em_init` MLEM iterations.
pub fn initial_image<A: SystemModel + ?Sized>(m: &Measurement, a: &A, n_em_init: usize) -> Result<Image> {
    Ok(em_reconstruct(m, a, n_em_init)?.0)
}

/// Dispatches on `cfg.algorithm`. `model` is required for BCD-Net.
pub fn reconstruct<A: SystemModel + ?Sized>(
    m: &Measurement,
    a: &A,
    cfg: &ReconConfig,
    model: Option<&crate::denoiser::CidModel>,
) -> Result<(Image, ReconTrace)> {
    cfg.validate()?;
    match cfg.algorithm {
        Algorithm::Em => em_reconstruct(m, a, cfg.em_iterations),
        Algorithm::Bcdnet => {
            let model = model.ok_or_else(|| Error::Config("bcdnet needs a trained model".into()))?;
            bcd_net_reconstruct(m, a, model, cfg)
        }
        Algorithm::TvPdhg => tv_pdhg_reconstruct(m, a, cfg),
        Algorithm::NlmAdmm => nlm_admm_reconstruct(m, a, cfg),
    }
}
