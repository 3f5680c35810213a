//! Hyperspectral inpainting with plug-and-play ADMM.
//!
//! The solver alternates a patch sparse-coding step (PnP-ISTA against a
//! dictionary learned from the degraded cube), a low-rank step on the
//! pixels × bands unfolding (singular value thresholding, or an untrained
//! encoder–decoder fitted on the fly), a closed-form data-consistency step and
//! multiplier updates.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the 64-bit arithmetic used by the solver and the CLI.

pub mod config;
pub mod cube;
pub mod degrade;
pub mod dictionary;
pub mod dip;
pub mod error;
pub mod filter;
pub mod io;
pub mod lowrank;
pub mod metrics;
pub mod nlm;
pub mod pipeline;
pub mod scalar;
pub mod solver;
pub mod sparse;

pub use cube::{apply_mask, extract_patches, scatter_patches, Dims, HsiCube, MaskCube, PatchLayout, PatchScheme, PatchSet};
pub use error::{Error, Result};
pub use scalar::Real;

pub type Cube = HsiCube<f64>;
pub type Cube32 = HsiCube<f32>;
pub type Patches = PatchSet<f64>;
pub type Dict = dictionary::Dictionary<f64>;
pub type Code = sparse::SparseCode<f64>;
pub type Net = dip::DipNet<f64>;
pub type State = solver::SolverState<f64>;
