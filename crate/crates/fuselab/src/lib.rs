//! fuselab: process-design emulation for laser powder bed fusion.
//!
//! Mixed-input Gaussian-process emulators with categorical embeddings, a
//! hierarchical property pipeline with multi-source data fusion, variance
//! based sensitivity analysis, porosity extraction from cross-section images,
//! and a sampling-based screening optimizer.

pub mod analysis;
pub mod data;
pub mod domain;
pub mod error;
pub mod fusion;
pub mod gp;
pub mod imaging;
pub mod io;
pub mod optimize;
pub mod sobol;
pub mod synth;

pub use error::{Error, Result};
