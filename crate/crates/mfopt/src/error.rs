use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel window half-width {half_width} exceeds grid extent {nx}x{ny}")]
    KernelWindowExceedsGrid {
        half_width: usize,
        nx: usize,
        ny: usize,
    },

    #[error("radius below grid resolution: R = {radius} < h = {h}")]
    RadiusBelowResolution { radius: f64, h: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("degenerate partition: one region has zero volume")]
    DegeneratePartition,

    #[error("volume unreachable: no multiplier in [{lo}, {hi}] brackets the target volume")]
    VolumeUnreachable { lo: f64, hi: f64 },

    #[error("Stokes solve failed: {0}")]
    StokesSolve(String),

    #[error("Stokes residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    StokesResidual { residual: f64, tol: f64 },

    #[error("incompatible flow case: {0}")]
    IncompatibleFlow(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
