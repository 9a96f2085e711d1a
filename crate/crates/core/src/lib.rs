//! Low-count emission tomography reconstruction.
//!
//! The centerpiece is an unrolled block-coordinate-descent network that
//! alternates a trained convolutional soft-threshold denoiser with a
//! closed-form MAP-EM image update. Around it sit a 2-D parallel-beam system
//! model, a Poisson measurement simulator for high random-fraction regimes,
//! classical baselines (MLEM, TV via PDHG, non-local means via ADMM), the
//! evaluation metrics, and the file formats and orchestration used by the
//! `bcdpet` command-line tool.

pub mod config;
pub mod denoiser;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod projector;
pub mod recon;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use image::{Image, Sinogram};
pub use projector::{Geometry, Projector, SystemModel};
