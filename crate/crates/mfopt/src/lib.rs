//! Median-filter threshold dynamics for interface optimization.
//!
//! The crate implements the continuous weighted-quantile relaxation of
//! threshold dynamics on uniform 2D grids, the discrete energies it
//! monotonically decreases, and two applications: two-phase image
//! segmentation (Chan-Vese and local-image-fitting forces) and
//! volume-constrained Stokes-Brinkman topology optimization.

pub mod energy;
pub mod error;
pub mod filter;
pub mod grid;
pub mod kernel;
mod par;
pub mod segmentation;
pub mod stokes;

pub use energy::EnergyReport;
pub use error::{Error, Result};
pub use filter::{
    weighted_quantile_value, BinaryField, FilterKind, LevelSetField, SolverConfig,
};
pub use grid::{bilinear_sample, BoundaryMode, Grid2D, ScalarField2D};
pub use kernel::{
    circle_mask, convolve, gaussian_kernel_mask, gaussian_kernel_mask_subdivided, KernelMask,
};
