//! Two-phase segmentation drivers: Chan-Vese and local-image-fitting
//! forces plugged into the median-filter iteration.

use std::time::Instant;

use crate::energy::{
    relaxed_energy, relaxed_energy_with_interaction, EnergyReport,
};
use crate::error::{Error, Result};
use crate::filter::{
    binary_td_step, quadratic_quantile_step, threshold_field, weighted_quantile_step_with_interaction,
    FilterKind, LevelSetField, SolverConfig,
};
use crate::grid::ScalarField2D;
use crate::kernel::{convolve, gaussian_kernel_mask, gaussian_kernel_mask_subdivided, KernelMask};

/// Region means of the Chan-Vese model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvParams {
    pub c1: f64,
    pub c2: f64,
}

/// Local fitted means of the LIF model, one per region.
#[derive(Debug, Clone)]
pub struct LifMeans {
    pub m1: ScalarField2D,
    pub m2: ScalarField2D,
}

/// Which fidelity forces drive the segmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FidelityModel {
    ChanVese,
    /// Local image fitting with window standard deviation `sigma`
    /// (in domain units).
    Lif { sigma: f64 },
    /// No fidelity: `T = 1/2` everywhere, pure curvature motion.
    None,
}

/// One row of the iteration trace. The energy is evaluated at the
/// iterate `phi^k` with the region parameters freshly fitted to it.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    pub iter: usize,
    pub energy: EnergyReport,
    pub phi_change_l2: f64,
    pub wall_ms: f64,
}

/// Result of a segmentation run.
#[derive(Debug, Clone)]
pub struct SegmentationRun {
    pub phi: LevelSetField,
    pub trace: Vec<IterRecord>,
    pub iterations: usize,
    pub converged: bool,
}

const DEGENERATE_VOLUME: f64 = 1e-12;

/// Fit the Chan-Vese region means to the current relaxed partition:
/// `c1 = integral(I phi) / integral(phi)`, `c2` likewise for `1 - phi`.
pub fn cv_update_params(img: &ScalarField2D, phi: &LevelSetField) -> Result<CvParams> {
    assert_eq!(img.grid(), phi.grid(), "fields live on different grids");
    let area = phi.grid().cell_area();
    let mut num1 = 0.0;
    let mut den1 = 0.0;
    for (&i, &p) in img.values().iter().zip(phi.field().values()) {
        num1 += i * p;
        den1 += p;
    }
    let total: f64 = img.values().iter().sum();
    let n = img.grid().node_count() as f64;
    let (num2, den2) = (total - num1, n - den1);
    if den1 * area < DEGENERATE_VOLUME || den2 * area < DEGENERATE_VOLUME {
        return Err(Error::DegeneratePartition);
    }
    Ok(CvParams {
        c1: num1 / den1,
        c2: num2 / den2,
    })
}

/// Chan-Vese forces `F_i(x) = (I(x) - c_i)^2`.
pub fn cv_forces(img: &ScalarField2D, params: &CvParams) -> (ScalarField2D, ScalarField2D) {
    let g = *img.grid();
    let f = |c: f64| {
        ScalarField2D::new(
            g,
            img.values().iter().map(|&i| (i - c) * (i - c)).collect(),
        )
        .expect("forces are finite")
    };
    (f(params.c1), f(params.c2))
}

/// Fit the LIF local means: `m1 = K*(I phi) / K*phi`, `m2` likewise for
/// `1 - phi`, where `K` is the normalized window kernel.
///
/// Where a window sees (almost) none of a region the mean is undefined;
/// it falls back to the global image mean there.
pub fn lif_update_means(
    img: &ScalarField2D,
    phi: &LevelSetField,
    window: &KernelMask,
) -> Result<LifMeans> {
    const EPS: f64 = 1e-8;
    assert_eq!(img.grid(), phi.grid(), "fields live on different grids");
    let g = *img.grid();
    let iphi = ScalarField2D::new(
        g,
        img.values()
            .iter()
            .zip(phi.field().values())
            .map(|(&i, &p)| i * p)
            .collect(),
    )
    .expect("product is finite");
    let num1 = convolve(&iphi, window);
    let den1 = convolve(phi.field(), window);
    let img_smooth = convolve(img, window);

    let n = g.node_count();
    let mut m1 = Vec::with_capacity(n);
    let mut m2 = Vec::with_capacity(n);
    let global_mean = img.sum() / n as f64;
    for idx in 0..n {
        let d1 = den1.values()[idx];
        let d2 = 1.0 - d1;
        let n1 = num1.values()[idx];
        let smooth = img_smooth.values()[idx];
        m1.push(if d1 < EPS { global_mean } else { n1 / d1 });
        m2.push(if d2 < EPS {
            global_mean
        } else {
            (smooth - n1) / d2
        });
    }
    Ok(LifMeans {
        m1: ScalarField2D::new(g, m1)?,
        m2: ScalarField2D::new(g, m2)?,
    })
}

/// LIF forces `F_i(x) = integral K(x - y) (I(x) - m_i(y))^2 dy`, expanded
/// as `I^2 - 2 I (K*m_i) + K*(m_i^2)` for a normalized window.
pub fn lif_forces(
    img: &ScalarField2D,
    means: &LifMeans,
    window: &KernelMask,
) -> (ScalarField2D, ScalarField2D) {
    let g = *img.grid();
    let force = |m: &ScalarField2D| {
        let msq = ScalarField2D::new(g, m.values().iter().map(|&v| v * v).collect())
            .expect("square is finite");
        let km = convolve(m, window);
        let kmsq = convolve(&msq, window);
        ScalarField2D::new(
            g,
            img.values()
                .iter()
                .zip(km.values().iter().zip(kmsq.values()))
                .map(|(&i, (&a, &b))| i * i - 2.0 * i * a + b)
                .collect(),
        )
        .expect("force is finite")
    };
    (force(&means.m1), force(&means.m2))
}

/// Gaussian window for the LIF model with standard deviation `sigma`
/// (variance `sigma^2`, i.e. `tau = sigma^2 / 2` in kernel units).
pub fn lif_window(sigma: f64, grid: &crate::grid::Grid2D, truncation: f64) -> Result<KernelMask> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma = {sigma} must be positive")));
    }
    gaussian_kernel_mask(sigma * sigma / 2.0, grid, truncation)
}

/// Run the median-filter segmentation loop.
///
/// Each iteration refits the fidelity parameters to the current iterate,
/// rebuilds the threshold field, applies the configured filter, and logs
/// the energy of the pre-step iterate. Stops when the normalized L2
/// change drops below `config.epsilon` or after `config.k_max` steps.
pub fn segment(
    img: &ScalarField2D,
    phi0: LevelSetField,
    config: &SolverConfig,
    model: FidelityModel,
) -> Result<SegmentationRun> {
    config.validate()?;
    assert_eq!(img.grid(), phi0.grid(), "fields live on different grids");
    let grid = *img.grid();
    let mask = gaussian_kernel_mask_subdivided(
        config.tau,
        &grid,
        config.truncation,
        config.kernel_subdiv,
    )?;
    let window = match model {
        FidelityModel::Lif { sigma } => Some(lif_window(sigma, &grid, config.truncation)?),
        _ => None,
    };

    let mut phi = phi0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    // A degenerate partition mid-run keeps the previous parameters (a
    // no-worse choice that preserves the decay argument) instead of
    // aborting; with no previous fit both means fall back to the global
    // image mean, which makes the forces agree.
    let mut last_cv: Option<CvParams> = None;

    if config.k_max == 0 {
        return Ok(SegmentationRun {
            phi,
            trace,
            iterations: 0,
            converged: false,
        });
    }

    let fit_cv = |phi: &LevelSetField, last: &mut Option<CvParams>| -> Result<CvParams> {
        match cv_update_params(img, phi) {
            Ok(p) => {
                *last = Some(p);
                Ok(p)
            }
            Err(Error::DegeneratePartition) => Ok(last.unwrap_or_else(|| {
                let mean = img.sum() / img.grid().node_count() as f64;
                CvParams { c1: mean, c2: mean }
            })),
            Err(e) => Err(e),
        }
    };

    for k in 0..config.k_max {
        let t0 = Instant::now();
        let (f1, f2) = match model {
            FidelityModel::ChanVese => {
                let params = fit_cv(&phi, &mut last_cv)?;
                cv_forces(img, &params)
            }
            FidelityModel::Lif { .. } => {
                let window = window.as_ref().expect("window built above");
                let means = lif_update_means(img, &phi, window)?;
                lif_forces(img, &means, window)
            }
            FidelityModel::None => (
                ScalarField2D::zeros(grid),
                ScalarField2D::zeros(grid),
            ),
        };
        let t = threshold_field(&f1, &f2, config.lambda_tilde);

        let (next, energy) = match config.filter_kind {
            FilterKind::WeightedQuantile => {
                let (next, interaction) =
                    weighted_quantile_step_with_interaction(&phi, &t, &mask);
                let energy = relaxed_energy_with_interaction(
                    &phi,
                    &f1,
                    &f2,
                    config.lambda_tilde,
                    interaction,
                );
                (next, energy)
            }
            FilterKind::BinaryTd => {
                let u = phi.threshold(0.5);
                let energy =
                    crate::energy::binary_energy(&u, &f1, &f2, config.lambda_tilde, &mask);
                (binary_td_step(&u, &t, &mask).as_level_set(), energy)
            }
            FilterKind::Quadratic => {
                let energy = relaxed_energy(&phi, &f1, &f2, config.lambda_tilde, &mask);
                (quadratic_quantile_step(&phi, &t, config.tau)?, energy)
            }
        };

        let change = next.field().l2_distance(phi.field());
        trace.push(IterRecord {
            iter: k,
            energy,
            phi_change_l2: change,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        phi = next;
        iterations = k + 1;
        if change < config.epsilon {
            converged = true;
            break;
        }
    }

    // Final row: energy of the last iterate, no further movement.
    let (f1, f2) = match model {
        FidelityModel::ChanVese => {
            let params = fit_cv(&phi, &mut last_cv)?;
            cv_forces(img, &params)
        }
        FidelityModel::Lif { .. } => {
            let window = window.as_ref().expect("window built above");
            let means = lif_update_means(img, &phi, window)?;
            lif_forces(img, &means, window)
        }
        FidelityModel::None => (ScalarField2D::zeros(grid), ScalarField2D::zeros(grid)),
    };
    let final_energy = if config.filter_kind == FilterKind::BinaryTd {
        crate::energy::binary_energy(&phi.threshold(0.5), &f1, &f2, config.lambda_tilde, &mask)
    } else {
        relaxed_energy(&phi, &f1, &f2, config.lambda_tilde, &mask)
    };
    trace.push(IterRecord {
        iter: iterations,
        energy: final_energy,
        phi_change_l2: 0.0,
        wall_ms: 0.0,
    });

    Ok(SegmentationRun {
        phi,
        trace,
        iterations,
        converged,
    })
}
