//! Discrete energies: heat-content perimeter, binary and relaxed total
//! energies, the movement limiter, and the coarea consistency check.

use crate::filter::{BinaryField, LevelSetField, Sampler};
use crate::grid::ScalarField2D;
use crate::kernel::KernelMask;
use crate::par;

/// One row of the optimization trace.
///
/// Conventions: `perimeter` is the raw (unscaled) heat-content term
/// `integral (1-u)(W*u) dx`; `total = fidelity + lambda_tilde * perimeter`;
/// `multiplier` is the volume multiplier, zero for unconstrained runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub fidelity: f64,
    pub perimeter: f64,
    pub total: f64,
    pub volume: f64,
    pub multiplier: f64,
}

/// `sum_x sum_j w_j |a(x) - b(x + y_j)|` (no `h^2` factor), with the
/// grid's boundary extension.
fn cross_abs_sum(a: &ScalarField2D, b: &ScalarField2D, mask: &KernelMask) -> f64 {
    assert_eq!(a.grid(), b.grid(), "fields live on different grids");
    let grid = a.grid();
    let nx = grid.nx();
    let sampler = Sampler::new(b, mask);
    let weights = mask.weights();
    let av = a.values();
    par::row_sums(grid.ny(), |iy| {
        let mut buf = vec![0.0f64; mask.len()];
        let mut acc = 0.0;
        for ix in 0..nx {
            sampler.gather(ix, iy, &mut buf);
            let c = av[iy * nx + ix];
            for (&v, &w) in buf.iter().zip(weights) {
                acc += w * (c - v).abs();
            }
        }
        acc
    })
}

/// Raw interface energy `1/2 h^2 sum_x sum_j w_j |phi(x) - phi(x+y_j)|`.
///
/// For a binary field this equals the raw heat content
/// `integral (1-u)(W*u) dx`, so binary and relaxed totals are directly
/// comparable.
pub fn interface_energy(phi: &ScalarField2D, mask: &KernelMask) -> f64 {
    0.5 * cross_abs_sum(phi, phi, mask) * phi.grid().cell_area()
}

/// Heat-content perimeter `sqrt(pi / tau) * integral (1 - u)(W * u) dx`.
///
/// For a straight interface this is an exact perimeter in the continuum,
/// independent of `tau`; curvature contributes an `O(tau)` correction.
pub fn heat_content_perimeter(u: &BinaryField, tau: f64, mask: &KernelMask) -> f64 {
    let conv = crate::kernel::convolve(u.field(), mask);
    let grid = u.field().grid();
    let nx = grid.nx();
    let uv = u.field().values();
    let cv = conv.values();
    let raw = par::row_sums(grid.ny(), |iy| {
        let base = iy * nx;
        (0..nx)
            .map(|ix| (1.0 - uv[base + ix]) * cv[base + ix])
            .sum()
    }) * grid.cell_area();
    (std::f64::consts::PI / tau).sqrt() * raw
}

/// Fidelity integral `integral (phi F1 + (1 - phi) F2) dx`.
pub fn fidelity_integral(phi: &ScalarField2D, f1: &ScalarField2D, f2: &ScalarField2D) -> f64 {
    assert_eq!(phi.grid(), f1.grid());
    assert_eq!(phi.grid(), f2.grid());
    let grid = phi.grid();
    let nx = grid.nx();
    let (pv, av, bv) = (phi.values(), f1.values(), f2.values());
    par::row_sums(grid.ny(), |iy| {
        let base = iy * nx;
        (0..nx)
            .map(|ix| {
                let p = pv[base + ix];
                p * av[base + ix] + (1.0 - p) * bv[base + ix]
            })
            .sum()
    }) * grid.cell_area()
}

/// Total energy of a binary configuration.
///
/// On binary fields `1/2 sum |u(x) - u(y)|` collapses to the heat content
/// `integral (1-u)(W*u)`, so the perimeter term is computed by (separable)
/// convolution instead of a neighborhood gather.
pub fn binary_energy(
    u: &BinaryField,
    f1: &ScalarField2D,
    f2: &ScalarField2D,
    lambda_tilde: f64,
    mask: &KernelMask,
) -> EnergyReport {
    let fidelity = fidelity_integral(u.field(), f1, f2);
    let conv = crate::kernel::convolve(u.field(), mask);
    let grid = u.field().grid();
    let nx = grid.nx();
    let (uv, cv) = (u.field().values(), conv.values());
    let perimeter = par::row_sums(grid.ny(), |iy| {
        let base = iy * nx;
        (0..nx)
            .map(|ix| (1.0 - uv[base + ix]) * cv[base + ix])
            .sum()
    }) * grid.cell_area();
    EnergyReport {
        fidelity,
        perimeter,
        total: fidelity + lambda_tilde * perimeter,
        volume: u.field().integral(),
        multiplier: 0.0,
    }
}

/// Total energy of a relaxed configuration; coincides with
/// [`binary_energy`] on binary inputs.
pub fn relaxed_energy(
    phi: &LevelSetField,
    f1: &ScalarField2D,
    f2: &ScalarField2D,
    lambda_tilde: f64,
    mask: &KernelMask,
) -> EnergyReport {
    let fidelity = fidelity_integral(phi.field(), f1, f2);
    let perimeter = interface_energy(phi.field(), mask);
    EnergyReport {
        fidelity,
        perimeter,
        total: fidelity + lambda_tilde * perimeter,
        volume: phi.volume(),
        multiplier: 0.0,
    }
}

/// Like [`relaxed_energy`] but reuses a precomputed interaction sum
/// `sum_x sum_j w_j |phi(x) - phi(x+y_j)|` (no `h^2`), as returned by
/// the fused quantile step.
pub fn relaxed_energy_with_interaction(
    phi: &LevelSetField,
    f1: &ScalarField2D,
    f2: &ScalarField2D,
    lambda_tilde: f64,
    interaction: f64,
) -> EnergyReport {
    let fidelity = fidelity_integral(phi.field(), f1, f2);
    let perimeter = 0.5 * interaction * phi.grid().cell_area();
    EnergyReport {
        fidelity,
        perimeter,
        total: fidelity + lambda_tilde * perimeter,
        volume: phi.volume(),
        multiplier: 0.0,
    }
}

/// Movement limiter between consecutive iterates:
/// `M = h^2 (2 C(phi, phi_prev) - C(phi, phi) - C(phi_prev, phi_prev))`
/// with `C(a, b) = sum_x sum_j w_j |a(x) - b(x+y_j)|`.
///
/// Nonnegative; zero iff the iterates agree wherever the kernel couples
/// them. The per-step energy decay is at least `lambda_tilde / 2 * M`.
pub fn movement_limiter(
    phi: &LevelSetField,
    phi_prev: &LevelSetField,
    mask: &KernelMask,
) -> f64 {
    let cross = cross_abs_sum(phi.field(), phi_prev.field(), mask);
    let self_a = cross_abs_sum(phi.field(), phi.field(), mask);
    let self_b = cross_abs_sum(phi_prev.field(), phi_prev.field(), mask);
    (2.0 * cross - self_a - self_b) * phi.grid().cell_area()
}

/// Coarea consistency: compares the relaxed interface energy of `phi`
/// (left) against the average of the binary interface energies of its
/// super-level sets at `levels` midpoint thresholds (right).
///
/// The identity is exact whenever every value of `phi` is a multiple of
/// `1 / levels`.
pub fn coarea_check(phi: &LevelSetField, mask: &KernelMask, levels: usize) -> (f64, f64) {
    assert!(levels > 0);
    let lhs = interface_energy(phi.field(), mask);
    let mut rhs = 0.0;
    for l in 0..levels {
        let s = (l as f64 + 0.5) / levels as f64;
        let u = phi.threshold(s);
        rhs += interface_energy(u.field(), mask);
    }
    (lhs, rhs / levels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{threshold_field, weighted_quantile_step, LevelSetField};
    use crate::grid::{BoundaryMode, Grid2D};
    use crate::kernel::gaussian_kernel_mask;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn unit_grid(n: usize, mode: BoundaryMode) -> Grid2D {
        Grid2D::unit(n, mode).unwrap()
    }

    #[test]
    fn flat_interface_perimeter_is_unit_length() {
        let g = unit_grid(128, BoundaryMode::Mirror);
        let u = BinaryField::from_indicator(g, |ix, _| ix < 64);
        // The node at the interface kink gives an O((h/sigma)^2) error,
        // about h^2 / (12 sigma^2).
        for (tau, tol) in [(1e-4, 3e-2), (4e-4, 1e-2)] {
            let mask = gaussian_kernel_mask(tau, &g, 5.0).unwrap();
            let p = heat_content_perimeter(&u, tau, &mask);
            assert!(
                (p - 1.0).abs() < tol,
                "tau={tau}: perimeter {p} should be near 1"
            );
        }
    }

    #[test]
    fn disk_perimeter_matches_circumference() {
        let n = 256;
        let g = unit_grid(n, BoundaryMode::Mirror);
        let r = 0.3;
        let u = BinaryField::from_indicator(g, |ix, iy| {
            let x = (ix as f64 + 0.5) * g.h() - 0.5;
            let y = (iy as f64 + 0.5) * g.h() - 0.5;
            x * x + y * y <= r * r
        });
        let tau = 1e-4;
        let mask = gaussian_kernel_mask(tau, &g, 5.0).unwrap();
        let p = heat_content_perimeter(&u, tau, &mask);
        let exact = 2.0 * std::f64::consts::PI * r;
        assert!(
            (p - exact).abs() / exact < 0.03,
            "perimeter {p} vs 2 pi r = {exact}"
        );
    }

    #[test]
    fn relaxed_energy_reduces_to_binary_on_binary_inputs() {
        let g = unit_grid(64, BoundaryMode::Periodic);
        let u = BinaryField::from_indicator(g, |ix, iy| (ix / 9 + iy / 7) % 2 == 0);
        let f1 = ScalarField2D::from_fn(g, |ix, _| (ix as f64 * 0.1).sin());
        let f2 = ScalarField2D::from_fn(g, |_, iy| (iy as f64 * 0.07).cos());
        let mask = gaussian_kernel_mask(4e-4, &g, 4.0).unwrap();
        let eb = binary_energy(&u, &f1, &f2, 0.6, &mask);
        let er = relaxed_energy(&u.as_level_set(), &f1, &f2, 0.6, &mask);
        assert_abs_diff_eq!(eb.total, er.total, epsilon = 1e-12);
        assert_abs_diff_eq!(eb.perimeter, er.perimeter, epsilon = 1e-12);
        assert_abs_diff_eq!(eb.fidelity, er.fidelity, epsilon = 1e-12);
    }

    #[test]
    fn interface_energy_matches_raw_heat_content_for_binary_fields() {
        let g = unit_grid(64, BoundaryMode::Mirror);
        let u = BinaryField::from_indicator(g, |ix, iy| {
            let x = ix as f64 - 32.0;
            let y = iy as f64 - 32.0;
            x * x + y * y <= 400.0
        });
        let tau = 3e-4;
        let mask = gaussian_kernel_mask(tau, &g, 4.0).unwrap();
        let raw = heat_content_perimeter(&u, tau, &mask) / (std::f64::consts::PI / tau).sqrt();
        let inter = interface_energy(u.field(), &mask);
        assert_abs_diff_eq!(raw, inter, epsilon = 1e-12);
    }

    #[test]
    fn movement_limiter_is_nonnegative_and_zero_at_rest() {
        let g = unit_grid(32, BoundaryMode::Periodic);
        let mask = gaussian_kernel_mask(5e-4, &g, 4.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = LevelSetField::clamped(ScalarField2D::from_fn(g, |_, _| rng.gen()));
            let b = LevelSetField::clamped(ScalarField2D::from_fn(g, |_, _| rng.gen()));
            let m = movement_limiter(&a, &b, &mask);
            assert!(m >= -1e-12, "movement limiter {m} must be nonnegative");
        }
        let a = LevelSetField::clamped(ScalarField2D::from_fn(g, |ix, iy| {
            ((ix + iy) % 5) as f64 / 4.0
        }));
        assert_abs_diff_eq!(movement_limiter(&a, &a, &mask), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn coarea_identity_is_exact_on_quantized_fields() {
        let g = unit_grid(48, BoundaryMode::Mirror);
        let mask = gaussian_kernel_mask(5e-4, &g, 4.0).unwrap();
        let levels = 4;
        // phi takes values in {0, 1/4, 2/4, 3/4, 1}.
        let phi = LevelSetField::new(ScalarField2D::from_fn(g, |ix, iy| {
            ((ix * 3 + iy * 5) % (levels + 1)) as f64 / levels as f64
        }))
        .unwrap();
        let (lhs, rhs) = coarea_check(&phi, &mask, levels);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn quantile_step_never_increases_energy() {
        let g = unit_grid(48, BoundaryMode::Mirror);
        let mask = gaussian_kernel_mask(4e-4, &g, 4.0).unwrap();
        let lambda_tilde = 0.6;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for trial in 0..10 {
            let phi = LevelSetField::clamped(ScalarField2D::from_fn(g, |_, _| rng.gen()));
            let f1 = ScalarField2D::from_fn(g, |_, _| rng.gen_range(-0.5..0.5));
            let f2 = ScalarField2D::from_fn(g, |_, _| rng.gen_range(-0.5..0.5));
            let t = threshold_field(&f1, &f2, lambda_tilde);
            let mut cur = phi;
            let mut e_prev = relaxed_energy(&cur, &f1, &f2, lambda_tilde, &mask).total;
            for step in 0..5 {
                let next = weighted_quantile_step(&cur, &t, &mask);
                let e = relaxed_energy(&next, &f1, &f2, lambda_tilde, &mask).total;
                assert!(
                    e <= e_prev + 1e-12,
                    "trial {trial} step {step}: energy rose {e_prev} -> {e}"
                );
                e_prev = e;
                cur = next;
            }
        }
    }

    #[test]
    fn energy_decay_dominates_movement_limiter() {
        let g = unit_grid(48, BoundaryMode::Periodic);
        let mask = gaussian_kernel_mask(4e-4, &g, 4.0).unwrap();
        let lambda_tilde = 0.8;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let phi = LevelSetField::clamped(ScalarField2D::from_fn(g, |_, _| rng.gen()));
            let f1 = ScalarField2D::from_fn(g, |_, _| rng.gen_range(-0.5..0.5));
            let f2 = ScalarField2D::from_fn(g, |_, _| rng.gen_range(-0.5..0.5));
            let t = threshold_field(&f1, &f2, lambda_tilde);
            let next = weighted_quantile_step(&phi, &t, &mask);
            let e0 = relaxed_energy(&phi, &f1, &f2, lambda_tilde, &mask).total;
            let e1 = relaxed_energy(&next, &f1, &f2, lambda_tilde, &mask).total;
            let m = movement_limiter(&next, &phi, &mask);
            assert!(
                e0 - e1 >= 0.5 * lambda_tilde * m - 1e-10,
                "trial {trial}: decay {} < lambda_tilde/2 * M = {}",
                e0 - e1,
                0.5 * lambda_tilde * m
            );
        }
    }
}
