//! Uniform-grid scalar fields with periodic or mirror boundary extension.

use crate::error::{Error, Result};

/// How samples outside the grid are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Wrap around the domain.
    Periodic,
    /// Symmetric (half-sample) reflection about the domain edges.
    Mirror,
}

/// A uniform grid of square cells covering `[0, nx*h] x [0, ny*h]`.
///
/// Node `(ix, iy)` sits at the cell center `((ix + 1/2) h, (iy + 1/2) h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    h: f64,
    boundary_mode: BoundaryMode,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, h: f64, boundary_mode: BoundaryMode) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 cells per axis, got {nx}x{ny}"
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing h = {h} must be positive")));
        }
        Ok(Self {
            nx,
            ny,
            h,
            boundary_mode,
        })
    }

    /// Square grid on the unit domain `[0,1]^2` (`h = 1/n`).
    pub fn unit(n: usize, boundary_mode: BoundaryMode) -> Result<Self> {
        Self::new(n, n, 1.0 / n as f64, boundary_mode)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.boundary_mode
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Cell area `h^2`.
    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// Total domain area `|Omega|`.
    pub fn domain_area(&self) -> f64 {
        self.cell_area() * self.node_count() as f64
    }

    /// Resolve a possibly out-of-range index along an axis of length `n`.
    #[inline]
    pub(crate) fn resolve_axis(&self, i: i64, n: usize) -> usize {
        let n = n as i64;
        if (0..n).contains(&i) {
            return i as usize;
        }
        match self.boundary_mode {
            BoundaryMode::Periodic => (i.rem_euclid(n)) as usize,
            BoundaryMode::Mirror => {
                // Half-sample symmetric extension with period 2n.
                let m = i.rem_euclid(2 * n);
                if m < n {
                    m as usize
                } else {
                    (2 * n - 1 - m) as usize
                }
            }
        }
    }

    #[inline]
    pub(crate) fn resolve(&self, ix: i64, iy: i64) -> (usize, usize) {
        (self.resolve_axis(ix, self.nx), self.resolve_axis(iy, self.ny))
    }
}

/// Real-valued field sampled at grid nodes, stored row-major in `iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidGrid(format!(
                "value count {} does not match grid {}x{}",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.node_count()],
        }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Build a field by evaluating `f(ix, iy)` at every node.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for iy in 0..grid.ny() {
            for ix in 0..grid.nx() {
                values.push(f(ix, iy));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.values[iy * self.grid.nx + ix] = v;
    }

    /// Value at a possibly out-of-range node, resolved by the boundary mode.
    #[inline]
    pub fn at_extended(&self, ix: i64, iy: i64) -> f64 {
        let (jx, jy) = self.grid.resolve(ix, iy);
        self.values[jy * self.grid.nx + jx]
    }

    /// Sum of all node values.
    pub fn sum(&self) -> f64 {
        crate::par::row_sums(self.grid.ny, |iy| {
            let row = &self.values[iy * self.grid.nx..(iy + 1) * self.grid.nx];
            row.iter().sum()
        })
    }

    /// Collocation integral: sum of node values times `h^2`.
    pub fn integral(&self) -> f64 {
        self.sum() * self.grid.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Normalized discrete L2 distance: `sqrt(sum (a-b)^2 / N)`.
    pub fn l2_distance(&self, other: &ScalarField2D) -> f64 {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let nx = self.grid.nx;
        let ss = crate::par::row_sums(self.grid.ny, |iy| {
            let a = &self.values[iy * nx..(iy + 1) * nx];
            let b = &other.values[iy * nx..(iy + 1) * nx];
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        });
        (ss / self.grid.node_count() as f64).sqrt()
    }
}

/// Bilinear interpolation of `f` at grid-index coordinates `(x, y)`.
///
/// The coordinate system is in cells: node `(ix, iy)` lies at `(ix, iy)`.
/// Out-of-range corners are resolved by the grid's boundary mode.
pub fn bilinear_sample(f: &ScalarField2D, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let ix = x0 as i64;
    let iy = y0 as i64;
    let v00 = f.at_extended(ix, iy);
    let v10 = f.at_extended(ix + 1, iy);
    let v01 = f.at_extended(ix, iy + 1);
    let v11 = f.at_extended(ix + 1, iy + 1);
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize, mode: BoundaryMode) -> Grid2D {
        Grid2D::new(n, n, 1.0 / n as f64, mode).unwrap()
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(Grid2D::new(3, 8, 0.1, BoundaryMode::Periodic).is_err());
        assert!(Grid2D::new(8, 8, 0.0, BoundaryMode::Periodic).is_err());
    }

    #[test]
    fn periodic_resolution_wraps() {
        let g = grid(8, BoundaryMode::Periodic);
        assert_eq!(g.resolve_axis(-1, 8), 7);
        assert_eq!(g.resolve_axis(8, 8), 0);
        assert_eq!(g.resolve_axis(17, 8), 1);
    }

    #[test]
    fn mirror_resolution_reflects() {
        let g = grid(8, BoundaryMode::Mirror);
        assert_eq!(g.resolve_axis(-1, 8), 0);
        assert_eq!(g.resolve_axis(-2, 8), 1);
        assert_eq!(g.resolve_axis(8, 8), 7);
        assert_eq!(g.resolve_axis(9, 8), 6);
        // period 2n
        assert_eq!(g.resolve_axis(16, 8), 0);
    }

    #[test]
    fn bilinear_exact_at_nodes() {
        let g = grid(8, BoundaryMode::Mirror);
        let f = ScalarField2D::from_fn(g, |ix, iy| (ix * 10 + iy) as f64);
        assert_eq!(bilinear_sample(&f, 3.0, 5.0), f.at(3, 5));
    }

    #[test]
    fn bilinear_reproduces_linear_fields() {
        let g = grid(16, BoundaryMode::Periodic);
        let (a, b) = (0.3, -0.7);
        let f = ScalarField2D::from_fn(g, |ix, iy| a * ix as f64 + b * iy as f64);
        for &(x, y) in &[(2.25, 3.5), (7.1, 9.9), (0.0, 14.75)] {
            assert_abs_diff_eq!(bilinear_sample(&f, x, y), a * x + b * y, epsilon = 1e-12);
        }
    }

    #[test]
    fn bilinear_cell_center_is_corner_mean() {
        let g = grid(8, BoundaryMode::Mirror);
        let mut f = ScalarField2D::zeros(g);
        f.set(2, 2, 1.0);
        f.set(3, 2, 2.0);
        f.set(2, 3, 5.0);
        f.set(3, 3, 8.0);
        assert_abs_diff_eq!(bilinear_sample(&f, 2.5, 2.5), 4.0, epsilon = 1e-12);
    }
}
