//! Discrete convolution kernels: truncated Gaussian windows and uniform
//! circle masks, plus the masked convolution itself.

use crate::error::{Error, Result};
use crate::grid::{bilinear_sample, Grid2D, ScalarField2D};
use crate::par;

/// A finite set of sampling offsets (in grid units, fractional allowed)
/// with nonnegative weights summing to one.
///
/// The weight set is symmetric under `(dx, dy) -> (-dx, -dy)`.
#[derive(Debug, Clone)]
pub struct KernelMask {
    offsets: Vec<(f64, f64)>,
    weights: Vec<f64>,
    /// Set when every offset is integral; same order as `offsets`.
    integer: Option<Vec<(i64, i64)>>,
    /// Set for product-form (Gaussian) masks: normalized 1D weights over
    /// `-hw..=hw`, enabling separable convolution.
    separable: Option<(Vec<f64>, i64)>,
    /// Set when every offset is a multiple of `1/s` for a small integer
    /// `s >= 2`: offsets in fine (1/s-cell) units plus the denominator.
    /// Enables sampling through a precomputed bilinear refinement table
    /// instead of per-sample interpolation.
    subgrid: Option<(Vec<(i64, i64)>, i64)>,
}

impl KernelMask {
    /// Build a mask from explicit offsets and weights. Weights are
    /// normalized to sum one; symmetry is checked.
    pub fn new(offsets: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self> {
        if offsets.len() != weights.len() || offsets.is_empty() {
            return Err(Error::InvalidKernel(
                "offsets and weights must be non-empty and of equal length".into(),
            ));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidKernel("weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidKernel("weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let integer = integral_offsets(&offsets);
        let subgrid = if integer.is_none() {
            subgrid_offsets(&offsets)
        } else {
            None
        };
        let mask = Self {
            integer,
            subgrid,
            offsets,
            weights,
            separable: None,
        };
        mask.check_symmetry()?;
        Ok(mask)
    }

    fn check_symmetry(&self) -> Result<()> {
        let mut fwd: Vec<(i64, i64, f64)> = Vec::with_capacity(self.offsets.len());
        let mut bwd = Vec::with_capacity(self.offsets.len());
        let q = |x: f64| (x * 1e9).round() as i64;
        for (&(dx, dy), &w) in self.offsets.iter().zip(&self.weights) {
            fwd.push((q(dx), q(dy), w));
            bwd.push((q(-dx), q(-dy), w));
        }
        let key = |t: &(i64, i64, f64)| (t.0, t.1);
        fwd.sort_by_key(key);
        bwd.sort_by_key(key);
        for (a, b) in fwd.iter().zip(&bwd) {
            if a.0 != b.0 || a.1 != b.1 || (a.2 - b.2).abs() > 1e-12 {
                return Err(Error::InvalidKernel(
                    "weight set is not symmetric under offset negation".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn offsets(&self) -> &[(f64, f64)] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub(crate) fn integer_offsets(&self) -> Option<&[(i64, i64)]> {
        self.integer.as_deref()
    }

    pub(crate) fn separable(&self) -> Option<(&[f64], i64)> {
        self.separable.as_ref().map(|(w, hw)| (w.as_slice(), *hw))
    }

    pub(crate) fn subgrid(&self) -> Option<(&[(i64, i64)], i64)> {
        self.subgrid.as_ref().map(|(o, s)| (o.as_slice(), *s))
    }
}

/// Express all offsets as multiples of `1/s` for the smallest `s` in
/// `2..=8`, if one exists.
fn subgrid_offsets(offsets: &[(f64, f64)]) -> Option<(Vec<(i64, i64)>, i64)> {
    's: for s in 2..=8i64 {
        let mut out = Vec::with_capacity(offsets.len());
        for &(dx, dy) in offsets {
            let (fx, fy) = (dx * s as f64, dy * s as f64);
            let (rx, ry) = (fx.round(), fy.round());
            if (fx - rx).abs() > 1e-9 || (fy - ry).abs() > 1e-9 {
                continue 's;
            }
            out.push((rx as i64, ry as i64));
        }
        return Some((out, s));
    }
    None
}

/// Bilinear refinement of `f` on the `1/s`-cell subgrid covering the
/// domain padded by `hw` whole cells on every side. Entry `(a, b)` holds
/// `bilinear_sample(f, (a - hw*s)/s, (b - hw*s)/s)`; returns the table
/// and its row stride.
pub(crate) fn refinement_table(
    f: &ScalarField2D,
    hw_x: i64,
    hw_y: i64,
    s: i64,
) -> (Vec<f64>, usize) {
    let grid = f.grid();
    let (nx, ny) = (grid.nx() as i64, grid.ny() as i64);
    let stride = ((nx - 1) * s + 2 * hw_x * s + 1) as usize;
    let rows = ((ny - 1) * s + 2 * hw_y * s + 1) as usize;
    let mut table = vec![0.0f64; stride * rows];
    for b in 0..rows {
        let y = (b as i64 - hw_y * s) as f64 / s as f64;
        for a in 0..stride {
            let x = (a as i64 - hw_x * s) as f64 / s as f64;
            table[b * stride + a] = bilinear_sample(f, x, y);
        }
    }
    (table, stride)
}

fn integral_offsets(offsets: &[(f64, f64)]) -> Option<Vec<(i64, i64)>> {
    let mut out = Vec::with_capacity(offsets.len());
    for &(dx, dy) in offsets {
        let (rx, ry) = (dx.round(), dy.round());
        if (dx - rx).abs() > 1e-12 || (dy - ry).abs() > 1e-12 {
            return None;
        }
        out.push((rx as i64, ry as i64));
    }
    Some(out)
}

/// Truncated Gaussian window for the heat kernel of variance `2*tau`,
/// sampled at cell centers and renormalized to sum one.
///
/// The window covers the square of half-width `ceil(truncation * sqrt(2 tau) / h)`
/// cells; `truncation` is in units of the kernel standard deviation.
pub fn gaussian_kernel_mask(tau: f64, grid: &Grid2D, truncation: f64) -> Result<KernelMask> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau = {tau} must be positive")));
    }
    if truncation < 3.0 {
        return Err(Error::Config(format!(
            "truncation = {truncation} must be at least 3 standard deviations"
        )));
    }
    let h = grid.h();
    let sigma = (2.0 * tau).sqrt();
    let hw = (truncation * sigma / h).ceil() as i64;
    let hw = hw.max(1);
    let width = 2 * hw as usize + 1;
    if width > grid.nx() || width > grid.ny() {
        return Err(Error::KernelWindowExceedsGrid {
            half_width: hw as usize,
            nx: grid.nx(),
            ny: grid.ny(),
        });
    }

    let mut w1d: Vec<f64> = (-hw..=hw)
        .map(|d| {
            let x = d as f64 * h;
            (-x * x / (4.0 * tau)).exp()
        })
        .collect();
    let s: f64 = w1d.iter().sum();
    for w in &mut w1d {
        *w /= s;
    }

    let mut offsets = Vec::with_capacity(width * width);
    let mut weights = Vec::with_capacity(width * width);
    let mut integer = Vec::with_capacity(width * width);
    for dy in -hw..=hw {
        for dx in -hw..=hw {
            offsets.push((dx as f64, dy as f64));
            integer.push((dx, dy));
            weights.push(w1d[(dx + hw) as usize] * w1d[(dy + hw) as usize]);
        }
    }
    Ok(KernelMask {
        offsets,
        weights,
        integer: Some(integer),
        separable: Some((w1d, hw)),
        subgrid: None,
    })
}

/// Truncated Gaussian mask sampled on the `1/subdiv`-cell subgrid inside
/// the truncation disk, renormalized to sum one.
///
/// Cell-center sampling quantizes the weighted quantile to the coarse
/// value set, which re-introduces pinning for interfaces aligned with the
/// grid; subdividing the sample lattice restores sub-cell resolution (the
/// bilinear-interpolation refinement of the quantile filter).
pub fn gaussian_kernel_mask_subdivided(
    tau: f64,
    grid: &Grid2D,
    truncation: f64,
    subdiv: u32,
) -> Result<KernelMask> {
    if subdiv == 0 {
        return Err(Error::Config("subdiv must be at least 1".into()));
    }
    if subdiv == 1 {
        return gaussian_kernel_mask(tau, grid, truncation);
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau = {tau} must be positive")));
    }
    if truncation < 3.0 {
        return Err(Error::Config(format!(
            "truncation = {truncation} must be at least 3 standard deviations"
        )));
    }
    let h = grid.h();
    let sigma = (2.0 * tau).sqrt();
    let hw = ((truncation * sigma / h).ceil() as i64).max(1);
    let width = 2 * hw as usize + 1;
    if width > grid.nx() || width > grid.ny() {
        return Err(Error::KernelWindowExceedsGrid {
            half_width: hw as usize,
            nx: grid.nx(),
            ny: grid.ny(),
        });
    }
    let s = subdiv as i64;
    let radius = truncation * sigma / h; // grid units
    let m = (radius * s as f64).ceil() as i64;
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    for j in -m..=m {
        for i in -m..=m {
            let (dx, dy) = (i as f64 / s as f64, j as f64 / s as f64);
            if dx * dx + dy * dy > radius * radius {
                continue;
            }
            let r2 = (dx * dx + dy * dy) * h * h;
            offsets.push((dx, dy));
            weights.push((-r2 / (4.0 * tau)).exp());
        }
    }
    KernelMask::new(offsets, weights)
}

/// Uniform mask of `m` points on the circle of radius `R = sqrt(2 tau)`.
///
/// `m` must be even (so the point set is symmetric) and the radius must
/// resolve on the grid (`R >= h`).
pub fn circle_mask(tau: f64, m: usize, grid: &Grid2D) -> Result<KernelMask> {
    if m < 4 || m % 2 != 0 {
        return Err(Error::Config(format!("circle sample count m = {m} must be even and >= 4")));
    }
    let radius = (2.0 * tau).sqrt();
    let h = grid.h();
    if radius < h {
        return Err(Error::RadiusBelowResolution { radius, h });
    }
    let r_cells = radius / h;
    let mut offsets = Vec::with_capacity(m);
    // First half explicitly, second half by negation to keep the set
    // exactly symmetric in floating point.
    for j in 0..m / 2 {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
        offsets.push((r_cells * theta.cos(), r_cells * theta.sin()));
    }
    for j in 0..m / 2 {
        let (dx, dy) = offsets[j];
        offsets.push((-dx, -dy));
    }
    let weights = vec![1.0 / m as f64; m];
    let integer = integral_offsets(&offsets);
    let subgrid = if integer.is_none() {
        subgrid_offsets(&offsets)
    } else {
        None
    };
    Ok(KernelMask {
        integer,
        subgrid,
        offsets,
        weights,
        separable: None,
    })
}

/// Masked convolution: `out(x) = sum_j w_j * sample(f, x + y_j)` with the
/// grid's boundary extension. Fractional offsets use bilinear sampling.
pub fn convolve(f: &ScalarField2D, mask: &KernelMask) -> ScalarField2D {
    if let Some((w1d, hw)) = mask.separable() {
        return convolve_separable(f, w1d, hw);
    }
    let grid = *f.grid();
    let nx = grid.nx();
    let mut out = ScalarField2D::zeros(grid);
    if let Some(ints) = mask.integer_offsets() {
        let weights = mask.weights();
        let src = f.values();
        par::for_each_row(out.values_mut(), nx, |iy, row| {
            for (ix, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (&(dx, dy), &w) in ints.iter().zip(weights) {
                    let (jx, jy) = grid.resolve(ix as i64 + dx, iy as i64 + dy);
                    acc += w * src[jy * nx + jx];
                }
                *o = acc;
            }
        });
    } else if let Some((fine, s)) = mask.subgrid() {
        let (mut hw_x, mut hw_y) = (1i64, 1i64);
        for &(fx, fy) in fine {
            hw_x = hw_x.max((fx.abs() + s - 1) / s);
            hw_y = hw_y.max((fy.abs() + s - 1) / s);
        }
        let (table, stride) = refinement_table(f, hw_x, hw_y, s);
        let weights = mask.weights();
        par::for_each_row(out.values_mut(), nx, |iy, row| {
            for (ix, o) in row.iter_mut().enumerate() {
                let base_x = ix as i64 * s + hw_x * s;
                let base_y = iy as i64 * s + hw_y * s;
                let mut acc = 0.0;
                for (&(fx, fy), &w) in fine.iter().zip(weights) {
                    let a = (base_x + fx) as usize;
                    let b = (base_y + fy) as usize;
                    acc += w * table[b * stride + a];
                }
                *o = acc;
            }
        });
    } else {
        let offsets = mask.offsets();
        let weights = mask.weights();
        par::for_each_row(out.values_mut(), nx, |iy, row| {
            for (ix, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (&(dx, dy), &w) in offsets.iter().zip(weights) {
                    acc += w * bilinear_sample(f, ix as f64 + dx, iy as f64 + dy);
                }
                *o = acc;
            }
        });
    }
    out
}

/// Lookup table extending axis indices `-hw..n+hw` to in-range indices.
pub(crate) fn extension_table(grid: &Grid2D, n: usize, hw: i64) -> Vec<usize> {
    (-hw..n as i64 + hw)
        .map(|i| grid.resolve_axis(i, n))
        .collect()
}

fn convolve_separable(f: &ScalarField2D, w1d: &[f64], hw: i64) -> ScalarField2D {
    let grid = *f.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let ext_x = extension_table(&grid, nx, hw);
    let ext_y = extension_table(&grid, ny, hw);

    // Horizontal pass.
    let mut tmp = ScalarField2D::zeros(grid);
    let src = f.values();
    par::for_each_row(tmp.values_mut(), nx, |iy, row| {
        let base = iy * nx;
        for (ix, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &w) in w1d.iter().enumerate() {
                acc += w * src[base + ext_x[ix + k]];
            }
            *o = acc;
        }
    });

    // Vertical pass.
    let mut out = ScalarField2D::zeros(grid);
    let tmp_vals = tmp.values().to_vec();
    par::for_each_row(out.values_mut(), nx, |iy, row| {
        for (k, &w) in w1d.iter().enumerate() {
            let sy = ext_y[iy + k] * nx;
            let srow = &tmp_vals[sy..sy + nx];
            for (o, &s) in row.iter_mut().zip(srow) {
                *o += w * s;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryMode;
    use approx::assert_abs_diff_eq;

    fn unit_grid(n: usize, mode: BoundaryMode) -> Grid2D {
        Grid2D::unit(n, mode).unwrap()
    }

    #[test]
    fn gaussian_weights_sum_to_one_and_center_dominates() {
        let g = unit_grid(64, BoundaryMode::Mirror);
        // sqrt(2 tau) = h  =>  tau = h^2 / 2
        let tau = g.h() * g.h() / 2.0;
        let mask = gaussian_kernel_mask(tau, &g, 4.0).unwrap();
        let sum: f64 = mask.weights().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        let center = mask
            .offsets()
            .iter()
            .position(|&(dx, dy)| dx == 0.0 && dy == 0.0)
            .unwrap();
        let wc = mask.weights()[center];
        for (i, &w) in mask.weights().iter().enumerate() {
            if i != center {
                assert!(w < wc, "center weight must strictly dominate");
            }
        }
    }

    #[test]
    fn gaussian_window_exceeding_grid_is_an_error() {
        let g = unit_grid(8, BoundaryMode::Mirror);
        let err = gaussian_kernel_mask(0.1, &g, 4.0).unwrap_err();
        assert!(matches!(err, Error::KernelWindowExceedsGrid { .. }));
    }

    /// Midpoint-rule quadrature of G_tau over cells at 10x finer sampling.
    fn quadrature_weight(dx: i64, dy: i64, tau: f64, h: f64) -> f64 {
        let sub = 10;
        let mut acc = 0.0;
        for sy in 0..sub {
            for sx in 0..sub {
                let x = (dx as f64 - 0.5 + (sx as f64 + 0.5) / sub as f64) * h;
                let y = (dy as f64 - 0.5 + (sy as f64 + 0.5) / sub as f64) * h;
                acc += (-(x * x + y * y) / (4.0 * tau)).exp();
            }
        }
        acc / (sub * sub) as f64
    }

    #[test]
    fn gaussian_weights_match_cell_quadrature() {
        let g = unit_grid(256, BoundaryMode::Mirror);
        // Point sampling agrees with cell averaging to O((h/sigma)^2 (r/sigma)^2),
        // so the oracle needs a well-resolved kernel: sigma = 25 h.
        let sigma = 25.0 * g.h();
        let tau = sigma * sigma / 2.0;
        let mask = gaussian_kernel_mask(tau, &g, 4.0).unwrap();
        let ints = mask.integer_offsets().unwrap();
        let mut quad: Vec<f64> = ints
            .iter()
            .map(|&(dx, dy)| quadrature_weight(dx, dy, tau, g.h()))
            .collect();
        let s: f64 = quad.iter().sum();
        for q in &mut quad {
            *q /= s;
        }
        // Point sampling and cell averaging only agree where the kernel
        // carries real mass; the far tails differ relatively.
        for (&w, &q) in mask.weights().iter().zip(&quad) {
            if q > 1e-6 {
                assert!(
                    (w - q).abs() / q < 1e-3,
                    "weight {w} vs quadrature {q}"
                );
            }
        }
    }

    #[test]
    fn circle_mask_m8_uniform_eighth_weights() {
        let g = unit_grid(128, BoundaryMode::Periodic);
        let mask = circle_mask(2e-4, 8, &g).unwrap();
        assert_eq!(mask.len(), 8);
        for &w in mask.weights() {
            assert_abs_diff_eq!(w, 0.125, epsilon = 1e-15);
        }
        let r = (2.0 * 2e-4_f64).sqrt() / g.h();
        for &(dx, dy) in mask.offsets() {
            assert_abs_diff_eq!((dx * dx + dy * dy).sqrt(), r, epsilon = 1e-12);
        }
    }

    #[test]
    fn circle_mask_m4_at_grid_radius_is_axis_aligned() {
        let g = unit_grid(128, BoundaryMode::Periodic);
        // R = h  =>  tau = h^2/2
        let tau = g.h() * g.h() / 2.0;
        let mask = circle_mask(tau, 4, &g).unwrap();
        let mut got: Vec<(i64, i64)> = mask
            .offsets()
            .iter()
            .map(|&(dx, dy)| (dx.round() as i64, dy.round() as i64))
            .collect();
        got.sort_unstable();
        assert_eq!(got, vec![(-1, 0), (0, -1), (0, 1), (1, 0)]);
    }

    #[test]
    fn circle_mask_below_resolution_is_an_error() {
        let g = unit_grid(128, BoundaryMode::Periodic);
        assert!(matches!(
            circle_mask(1e-6, 8, &g).unwrap_err(),
            Error::RadiusBelowResolution { .. }
        ));
    }

    #[test]
    fn convolve_preserves_constants() {
        let g = unit_grid(32, BoundaryMode::Mirror);
        let f = ScalarField2D::constant(g, 3.25);
        for mask in [
            gaussian_kernel_mask(5e-4, &g, 4.0).unwrap(),
            circle_mask(5e-3, 8, &g).unwrap(),
        ] {
            let out = convolve(&f, &mask);
            for &v in out.values() {
                assert_abs_diff_eq!(v, 3.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn convolve_impulse_reproduces_weights() {
        let g = unit_grid(32, BoundaryMode::Periodic);
        let mut f = ScalarField2D::zeros(g);
        f.set(16, 16, 1.0);
        let mask = gaussian_kernel_mask(2e-4, &g, 3.0).unwrap();
        let out = convolve(&f, &mask);
        for (&(dx, dy), &w) in mask.integer_offsets().unwrap().iter().zip(mask.weights()) {
            // Symmetric mask: response at x equals weight of offset -(dx,dy),
            // which equals the weight of (dx,dy).
            let v = out.at((16 + dx) as usize, (16 + dy) as usize);
            assert_abs_diff_eq!(v, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_semigroup_identity() {
        let g = unit_grid(64, BoundaryMode::Periodic);
        let f = ScalarField2D::from_fn(g, |ix, iy| {
            let x = (ix as f64 + 0.5) * g.h();
            let y = (iy as f64 + 0.5) * g.h();
            (2.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).cos()
        });
        let (t1, t2) = (2e-4, 3e-4);
        let m1 = gaussian_kernel_mask(t1, &g, 4.0).unwrap();
        let m2 = gaussian_kernel_mask(t2, &g, 4.0).unwrap();
        let m12 = gaussian_kernel_mask(t1 + t2, &g, 4.0).unwrap();
        let two = convolve(&convolve(&f, &m1), &m2);
        let one = convolve(&f, &m12);
        let sup = two
            .values()
            .iter()
            .zip(one.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(sup < 1e-3, "semigroup sup-norm gap {sup}");
    }
}
