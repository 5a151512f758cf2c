//! Activity detection for grant-free access in distributed MIMO with
//! distributed AMP and likelihood-ratio fusion.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: small complex Hermitian matrix kernels
//! - [`scenario`]: geometry, fading, pilots and per-trial realizations
//! - [`allocation`]: user-centric power control and AP clustering
//! - [`amp`]: the per-AP AMP chain, dAMP and cAMP
//! - [`state_evolution`]: Monte-Carlo state evolution and block-structure checks
//! - [`detection`]: LLR fusion, thresholding, ROC and hard-decision fusion
//! - [`harness`]: detector registry, experiment runner, outputs and verification suites

pub mod allocation;
pub mod amp;
pub mod detection;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod scenario;
pub mod state_evolution;

pub use error::{Error, Result};
