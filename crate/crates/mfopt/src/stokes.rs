//! Brinkman-penalized Stokes solver on a MAC staggered grid and the
//! volume-constrained topology-optimization driver.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::energy::{interface_energy, EnergyReport};
use crate::error::{Error, Result};
use crate::filter::{
    threshold_field, volume_constrained_step_from, LevelSetField, SolverConfig,
};
use crate::grid::{Grid2D, ScalarField2D};
use crate::kernel::{convolve, gaussian_kernel_mask, KernelMask};
use crate::segmentation::IterRecord;

/// Which domain edge an opening sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpeningKind {
    Inflow,
    Outflow,
}

/// Parabolic opening in an otherwise no-slip wall.
///
/// The normal velocity is `peak * (1 - ((s - center) / (height/2))^2)`
/// clamped at zero, where `s` is the coordinate along the edge in domain
/// units; the tangential velocity is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Opening {
    pub edge: Edge,
    pub kind: OpeningKind,
    pub center: f64,
    pub height: f64,
    pub peak: f64,
}

impl Opening {
    /// Analytic volumetric flux of the full parabolic profile.
    pub fn flux(&self) -> f64 {
        2.0 / 3.0 * self.peak * self.height
    }

    fn profile(&self, s: f64) -> f64 {
        let t = (s - self.center) / (0.5 * self.height);
        (self.peak * (1.0 - t * t)).max(0.0)
    }
}

/// Boundary-driven flow problem on the design domain.
#[derive(Debug, Clone)]
pub struct FlowCase {
    pub eta: f64,
    /// Maximum inverse permeability of the solid phase.
    pub alpha_bar: f64,
    /// Target fluid volume fraction.
    pub beta: f64,
    pub openings: Vec<Opening>,
    /// Optional cell-centered body force `(f_x, f_y)`.
    pub body_force: Option<(ScalarField2D, ScalarField2D)>,
}

impl FlowCase {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta = {} must be positive", self.eta)));
        }
        if !(self.alpha_bar > 0.0) {
            return Err(Error::Config(format!(
                "alpha_bar = {} must be positive",
                self.alpha_bar
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!(
                "beta = {} must lie in (0, 1]",
                self.beta
            )));
        }
        let mut net = 0.0;
        let mut scale: f64 = 0.0;
        for o in &self.openings {
            if !(o.height > 0.0) || o.peak < 0.0 {
                return Err(Error::Config(
                    "opening height must be positive and peak nonnegative".into(),
                ));
            }
            let f = o.flux();
            scale = scale.max(f.abs());
            net += match o.kind {
                OpeningKind::Inflow => f,
                OpeningKind::Outflow => -f,
            };
        }
        if net.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::IncompatibleFlow(format!(
                "net opening flux {net} is not balanced"
            )));
        }
        Ok(())
    }

    /// Velocity scale of the driving data, used to normalize residuals.
    pub fn inlet_scale(&self) -> f64 {
        self.openings
            .iter()
            .map(|o| o.peak)
            .fold(0.0_f64, f64::max)
            .max(1e-300)
    }
}

/// MAC staggered solution: `vx` on vertical faces (`(nx+1) x ny`), `vy`
/// on horizontal faces (`nx x (ny+1)`), pressure at cell centers.
#[derive(Debug, Clone)]
pub struct StokesState {
    grid: Grid2D,
    /// `vx[j * (nx+1) + i]`, `i` in `0..=nx`.
    pub vx: Vec<f64>,
    /// `vy[j * nx + i]`, `j` in `0..=ny`.
    pub vy: Vec<f64>,
    pub p: ScalarField2D,
}

impl StokesState {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn vx_at(&self, i: usize, j: usize) -> f64 {
        self.vx[j * (self.grid.nx() + 1) + i]
    }

    #[inline]
    pub fn vy_at(&self, i: usize, j: usize) -> f64 {
        self.vy[j * self.grid.nx() + i]
    }

    /// Velocity interpolated to the cell center.
    pub fn velocity_at_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            0.5 * (self.vx_at(i, j) + self.vx_at(i + 1, j)),
            0.5 * (self.vy_at(i, j) + self.vy_at(i, j + 1)),
        )
    }

    /// `|v|^2` interpolated to cell centers.
    pub fn speed_squared(&self) -> ScalarField2D {
        ScalarField2D::from_fn(self.grid, |i, j| {
            let (u, v) = self.velocity_at_center(i, j);
            u * u + v * v
        })
    }

    /// L-infinity norm of the discrete divergence over all cells.
    pub fn max_divergence(&self) -> f64 {
        let h = self.grid.h();
        let mut worst = 0.0_f64;
        for j in 0..self.grid.ny() {
            for i in 0..self.grid.nx() {
                let d = (self.vx_at(i + 1, j) - self.vx_at(i, j)
                    + self.vy_at(i, j + 1) - self.vy_at(i, j))
                    / h;
                worst = worst.max(d.abs());
            }
        }
        worst
    }
}

/// Inverse permeability `alpha = alpha_bar * W * (1 - phi)`, cell-centered.
pub fn brinkman_alpha(phi: &LevelSetField, alpha_bar: f64, mask: &KernelMask) -> ScalarField2D {
    assert!(alpha_bar > 0.0, "alpha_bar must be positive");
    let g = *phi.grid();
    let one_minus = ScalarField2D::new(
        g,
        phi.field().values().iter().map(|&v| 1.0 - v).collect(),
    )
    .expect("complement is finite");
    let mut out = convolve(&one_minus, mask);
    for v in out.values_mut() {
        *v = (*v * alpha_bar).clamp(0.0, alpha_bar);
    }
    out
}

/// Boundary face values implied by the openings, with the outflow faces
/// rescaled so the discrete flux sum balances exactly.
struct BoundaryData {
    /// `vx` at `i = 0` and `i = nx`, indexed by `j`.
    vx_left: Vec<f64>,
    vx_right: Vec<f64>,
    /// `vy` at `j = 0` and `j = ny`, indexed by `i`.
    vy_bottom: Vec<f64>,
    vy_top: Vec<f64>,
}

fn boundary_data(grid: &Grid2D, case: &FlowCase) -> Result<BoundaryData> {
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
    // Inward-positive contributions, inflow and outflow kept separate so
    // the outflow side can be rescaled for exact discrete balance.
    let mut inflow = vec![vec![0.0; ny], vec![0.0; ny], vec![0.0; nx], vec![0.0; nx]];
    let mut outflow = inflow.clone();
    for o in &case.openings {
        let (slot, n) = match o.edge {
            Edge::Left => (0usize, ny),
            Edge::Right => (1, ny),
            Edge::Bottom => (2, nx),
            Edge::Top => (3, nx),
        };
        let target = match o.kind {
            OpeningKind::Inflow => &mut inflow,
            OpeningKind::Outflow => &mut outflow,
        };
        for k in 0..n {
            let s = (k as f64 + 0.5) * h;
            target[slot][k] += o.profile(s);
        }
    }
    let sum = |v: &[Vec<f64>]| -> f64 { v.iter().flatten().sum::<f64>() * h };
    let in_total = sum(&inflow);
    let out_total = sum(&outflow);
    if in_total > 0.0 && out_total <= 0.0 {
        return Err(Error::IncompatibleFlow(
            "inflow prescribed but no outflow opening intersects the grid".into(),
        ));
    }
    let scale = if out_total > 0.0 {
        in_total / out_total
    } else {
        0.0
    };

    // Inward-positive net; convert to signed face components.
    let net = |slot: usize, k: usize| inflow[slot][k] - scale * outflow[slot][k];
    Ok(BoundaryData {
        vx_left: (0..ny).map(|j| net(0, j)).collect(),
        vx_right: (0..ny).map(|j| -net(1, j)).collect(),
        vy_bottom: (0..nx).map(|i| net(2, i)).collect(),
        vy_top: (0..nx).map(|i| -net(3, i)).collect(),
    })
}

/// Solve the Brinkman-Stokes system
/// `-eta lap(v) + alpha v + grad p = f`, `div v = 0`
/// with no-slip walls and the case's parabolic openings.
///
/// Assembles the saddle-point system over interior faces plus all cell
/// pressures (one pressure pinned for the gauge) and solves it with a
/// sparse LU factorization; the result is checked against the 1e-8
/// relative residual contract.
pub fn solve_stokes(alpha: &ScalarField2D, case: &FlowCase) -> Result<StokesState> {
    case.validate()?;
    let grid = *alpha.grid();
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
    let bc = boundary_data(&grid, case)?;
    let eta = case.eta;
    let ih2 = 1.0 / (h * h);
    let ih = 1.0 / h;

    let n_vx = (nx - 1) * ny;
    let n_vy = nx * (ny - 1);
    let n = n_vx + n_vy + nx * ny;
    let vx_id = |i: usize, j: usize| (i - 1) + (nx - 1) * j;
    let vy_id = |i: usize, j: usize| n_vx + i + nx * (j - 1);
    let p_id = |i: usize, j: usize| n_vx + n_vy + j * nx + i;

    let al = alpha.values();
    let fx_face = |i: usize, j: usize| {
        case.body_force
            .as_ref()
            .map_or(0.0, |(fx, _)| 0.5 * (fx.at(i - 1, j) + fx.at(i, j)))
    };
    let fy_face = |i: usize, j: usize| {
        case.body_force
            .as_ref()
            .map_or(0.0, |(_, fy)| 0.5 * (fy.at(i, j - 1) + fy.at(i, j)))
    };

    let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(9 * n);
    let mut rhs = vec![0.0f64; n];
    let push = |trips: &mut Vec<Triplet<usize, usize, f64>>, r: usize, c: usize, v: f64| {
        trips.push(Triplet::new(r, c, v));
    };

    // x-momentum at interior vertical faces.
    for j in 0..ny {
        for i in 1..nx {
            let row = vx_id(i, j);
            let a_face = 0.5 * (al[j * nx + (i - 1)] + al[j * nx + i]);
            let mut diag = 4.0 * eta * ih2 + a_face;
            // x-neighbors (normal direction): Dirichlet at the edges.
            if i == 1 {
                rhs[row] += eta * ih2 * bc.vx_left[j];
            } else {
                push(&mut trips, row, vx_id(i - 1, j), -eta * ih2);
            }
            if i == nx - 1 {
                rhs[row] += eta * ih2 * bc.vx_right[j];
            } else {
                push(&mut trips, row, vx_id(i + 1, j), -eta * ih2);
            }
            // y-neighbors (tangential): ghost reflection about the wall,
            // tangential velocity zero there.
            if j == 0 {
                diag += eta * ih2;
            } else {
                push(&mut trips, row, vx_id(i, j - 1), -eta * ih2);
            }
            if j == ny - 1 {
                diag += eta * ih2;
            } else {
                push(&mut trips, row, vx_id(i, j + 1), -eta * ih2);
            }
            push(&mut trips, row, row, diag);
            push(&mut trips, row, p_id(i, j), ih);
            push(&mut trips, row, p_id(i - 1, j), -ih);
            rhs[row] += fx_face(i, j);
        }
    }

    // y-momentum at interior horizontal faces.
    for j in 1..ny {
        for i in 0..nx {
            let row = vy_id(i, j);
            let a_face = 0.5 * (al[(j - 1) * nx + i] + al[j * nx + i]);
            let mut diag = 4.0 * eta * ih2 + a_face;
            if j == 1 {
                rhs[row] += eta * ih2 * bc.vy_bottom[i];
            } else {
                push(&mut trips, row, vy_id(i, j - 1), -eta * ih2);
            }
            if j == ny - 1 {
                rhs[row] += eta * ih2 * bc.vy_top[i];
            } else {
                push(&mut trips, row, vy_id(i, j + 1), -eta * ih2);
            }
            if i == 0 {
                diag += eta * ih2;
            } else {
                push(&mut trips, row, vy_id(i - 1, j), -eta * ih2);
            }
            if i == nx - 1 {
                diag += eta * ih2;
            } else {
                push(&mut trips, row, vy_id(i + 1, j), -eta * ih2);
            }
            push(&mut trips, row, row, diag);
            push(&mut trips, row, p_id(i, j), ih);
            push(&mut trips, row, p_id(i, j - 1), -ih);
            rhs[row] += fy_face(i, j);
        }
    }

    // Continuity per cell; cell (0,0) is replaced by the pressure pin.
    for j in 0..ny {
        for i in 0..nx {
            let row = p_id(i, j);
            if i == 0 && j == 0 {
                push(&mut trips, row, row, 1.0);
                continue;
            }
            // vx(i+1, j) - vx(i, j)
            if i + 1 == nx {
                rhs[row] -= ih * bc.vx_right[j];
            } else {
                push(&mut trips, row, vx_id(i + 1, j), ih);
            }
            if i == 0 {
                rhs[row] += ih * bc.vx_left[j];
            } else {
                push(&mut trips, row, vx_id(i, j), -ih);
            }
            // vy(i, j+1) - vy(i, j)
            if j + 1 == ny {
                rhs[row] -= ih * bc.vy_top[i];
            } else {
                push(&mut trips, row, vy_id(i, j + 1), ih);
            }
            if j == 0 {
                rhs[row] += ih * bc.vy_bottom[i];
            } else {
                push(&mut trips, row, vy_id(i, j), -ih);
            }
        }
    }

    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| Error::StokesSolve(format!("assembly failed: {e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::StokesSolve(format!("sparse LU failed: {e:?}")))?;
    let b = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let mut x = lu.solve(&b);
    // Iterative refinement: the Brinkman contrast (alpha up to ~1e5/h)
    // makes the saddle-point matrix ill-conditioned enough that a single
    // LU solve can miss the 1e-8 residual contract in double precision.
    for _ in 0..2 {
        let r = &b - &a * &x;
        let max_r = (0..n).fold(0.0f64, |m, i| m.max(r[(i, 0)].abs()));
        if max_r == 0.0 {
            break;
        }
        x += lu.solve(&r);
    }

    // Reconstruct full staggered fields including Dirichlet faces.
    let mut vx = vec![0.0f64; (nx + 1) * ny];
    let mut vy = vec![0.0f64; nx * (ny + 1)];
    for j in 0..ny {
        vx[j * (nx + 1)] = bc.vx_left[j];
        vx[j * (nx + 1) + nx] = bc.vx_right[j];
        for i in 1..nx {
            vx[j * (nx + 1) + i] = x[(vx_id(i, j), 0)];
        }
    }
    for i in 0..nx {
        vy[i] = bc.vy_bottom[i];
        vy[ny * nx + i] = bc.vy_top[i];
    }
    for j in 1..ny {
        for i in 0..nx {
            vy[j * nx + i] = x[(vy_id(i, j), 0)];
        }
    }
    let mut p_vals: Vec<f64> = (0..nx * ny).map(|k| x[(n_vx + n_vy + k, 0)]).collect();
    let mean = p_vals.iter().sum::<f64>() / p_vals.len() as f64;
    for v in &mut p_vals {
        *v -= mean;
    }

    let state = StokesState {
        grid,
        vx,
        vy,
        p: ScalarField2D::new(grid, p_vals)
            .map_err(|_| Error::StokesSolve("solver produced non-finite pressure".into()))?,
    };

    // Residual contract, relative to the driving velocity scale.
    let res = solve_residual(&state, alpha, case);
    let tol = 1e-8;
    if !res.is_finite() || res / case.inlet_scale().max(1.0) > tol {
        return Err(Error::StokesResidual {
            residual: res,
            tol,
        });
    }
    Ok(state)
}

/// L-infinity residual of the momentum and continuity equations at the
/// given state (absolute units).
fn solve_residual(state: &StokesState, alpha: &ScalarField2D, case: &FlowCase) -> f64 {
    let grid = state.grid;
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
    let (eta, ih2, ih) = (case.eta, 1.0 / (h * h), 1.0 / h);
    let al = alpha.values();
    let mut worst = 0.0_f64;

    for j in 0..ny {
        for i in 1..nx {
            let c = state.vx_at(i, j);
            let w = state.vx_at(i - 1, j);
            let e = state.vx_at(i + 1, j);
            let s = if j == 0 { -c } else { state.vx_at(i, j - 1) };
            let nn = if j == ny - 1 { -c } else { state.vx_at(i, j + 1) };
            let a_face = 0.5 * (al[j * nx + (i - 1)] + al[j * nx + i]);
            let f = case
                .body_force
                .as_ref()
                .map_or(0.0, |(fx, _)| 0.5 * (fx.at(i - 1, j) + fx.at(i, j)));
            let r = -eta * ih2 * (w + e + s + nn - 4.0 * c)
                + a_face * c
                + ih * (state.p.at(i, j) - state.p.at(i - 1, j))
                - f;
            worst = worst.max(r.abs());
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let c = state.vy_at(i, j);
            let s = state.vy_at(i, j - 1);
            let nn = state.vy_at(i, j + 1);
            let w = if i == 0 { -c } else { state.vy_at(i - 1, j) };
            let e = if i == nx - 1 { -c } else { state.vy_at(i + 1, j) };
            let a_face = 0.5 * (al[(j - 1) * nx + i] + al[j * nx + i]);
            let f = case
                .body_force
                .as_ref()
                .map_or(0.0, |(_, fy)| 0.5 * (fy.at(i, j - 1) + fy.at(i, j)));
            let r = -eta * ih2 * (w + e + s + nn - 4.0 * c)
                + a_face * c
                + ih * (state.p.at(i, j) - state.p.at(i, j - 1))
                - f;
            worst = worst.max(r.abs());
        }
    }
    worst.max(state.max_divergence())
}

/// Driving forces for the median filter: `F1 = 0`,
/// `F2 = 1/2 alpha_bar W * |v|^2` with `|v|^2` at cell centers.
pub fn stokes_forces(
    state: &StokesState,
    alpha_bar: f64,
    mask: &KernelMask,
) -> (ScalarField2D, ScalarField2D) {
    let speed2 = state.speed_squared();
    let mut f2 = convolve(&speed2, mask);
    for v in f2.values_mut() {
        *v *= 0.5 * alpha_bar;
    }
    (ScalarField2D::zeros(*state.grid()), f2)
}

/// Total dissipation `sum (eta/2 |grad v|^2 + 1/2 alpha |v|^2) h^2`,
/// evaluated at cell centers.
///
/// Tangential derivatives use centered differences in the interior and
/// one-sided differences at the boundary, so a rigid translation has
/// exactly zero strain.
pub fn dissipation_energy(state: &StokesState, alpha: &ScalarField2D, eta: f64) -> f64 {
    let grid = state.grid;
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());

    // Cell-centered velocity components.
    let vxc = ScalarField2D::from_fn(grid, |i, j| 0.5 * (state.vx_at(i, j) + state.vx_at(i + 1, j)));
    let vyc = ScalarField2D::from_fn(grid, |i, j| 0.5 * (state.vy_at(i, j) + state.vy_at(i, j + 1)));

    let mut total = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let dvx_dx = (state.vx_at(i + 1, j) - state.vx_at(i, j)) / h;
            let dvy_dy = (state.vy_at(i, j + 1) - state.vy_at(i, j)) / h;
            let dvx_dy = if j == 0 {
                (vxc.at(i, 1) - vxc.at(i, 0)) / h
            } else if j == ny - 1 {
                (vxc.at(i, ny - 1) - vxc.at(i, ny - 2)) / h
            } else {
                (vxc.at(i, j + 1) - vxc.at(i, j - 1)) / (2.0 * h)
            };
            let dvy_dx = if i == 0 {
                (vyc.at(1, j) - vyc.at(0, j)) / h
            } else if i == nx - 1 {
                (vyc.at(nx - 1, j) - vyc.at(nx - 2, j)) / h
            } else {
                (vyc.at(i + 1, j) - vyc.at(i - 1, j)) / (2.0 * h)
            };
            let grad2 = dvx_dx * dvx_dx + dvx_dy * dvx_dy + dvy_dx * dvy_dx + dvy_dy * dvy_dy;
            let (u, v) = (vxc.at(i, j), vyc.at(i, j));
            total += 0.5 * eta * grad2 + 0.5 * alpha.at(i, j) * (u * u + v * v);
        }
    }
    total * grid.cell_area()
}

/// Result of a topology-optimization run.
#[derive(Debug, Clone)]
pub struct TopoptRun {
    pub phi: LevelSetField,
    pub trace: Vec<IterRecord>,
    /// Dissipation of the converged flow at each traced iterate.
    pub dissipation: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Volume-constrained topology optimization:
/// `brinkman_alpha -> solve_stokes -> stokes_forces -> threshold_field ->
/// volume_constrained_step` until the L2 change drops below
/// `config.epsilon` or `config.k_max` iterations.
///
/// The trace starts at the first volume-constrained iterate; every traced
/// row satisfies the volume constraint to `1e-5 |Omega|` and stores the
/// multiplier found by the bisection. The `fidelity` slot holds
/// `integral (1 - phi) F2` and `total = fidelity + lambda_tilde * perimeter`.
pub fn optimize_topology(
    case: &FlowCase,
    config: &SolverConfig,
    phi0: LevelSetField,
) -> Result<TopoptRun> {
    config.validate()?;
    case.validate()?;
    let grid = *phi0.grid();
    let mask = gaussian_kernel_mask(config.tau, &grid, config.truncation)?;
    let v_target = case.beta * grid.domain_area();
    const VOL_TOL: f64 = 1e-5;

    let mut phi = phi0;
    let mut multiplier = 0.0;
    let mut trace: Vec<IterRecord> = Vec::new();
    let mut dissipation = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for k in 0..config.k_max {
        let t0 = std::time::Instant::now();
        let alpha = brinkman_alpha(&phi, case.alpha_bar, &mask);
        let state = solve_stokes(&alpha, case)?;
        let (f1, f2) = stokes_forces(&state, case.alpha_bar, &mask);

        // Trace rows cover the constrained iterates (k >= 1), each scored
        // with the forces from its own converged flow.
        if k > 0 {
            let fid = crate::energy::fidelity_integral(phi.field(), &f1, &f2);
            let per = interface_energy(phi.field(), &mask);
            trace.push(IterRecord {
                iter: k,
                energy: EnergyReport {
                    fidelity: fid,
                    perimeter: per,
                    total: fid + config.lambda_tilde * per,
                    volume: phi.volume(),
                    multiplier,
                },
                phi_change_l2: 0.0,
                wall_ms: 0.0,
            });
            dissipation.push(dissipation_energy(&state, &alpha, case.eta));
        }

        let t = threshold_field(&f1, &f2, config.lambda_tilde);
        let (next, lam) =
            volume_constrained_step_from(&phi, &t, &mask, v_target, VOL_TOL, multiplier)?;
        multiplier = lam;
        let change = next.field().l2_distance(phi.field());
        if let Some(last) = trace.last_mut() {
            last.phi_change_l2 = change;
            last.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        }
        phi = next;
        iterations = k + 1;
        if k > 0 && change < config.epsilon {
            converged = true;
            break;
        }
    }

    // Final row for the last iterate.
    let alpha = brinkman_alpha(&phi, case.alpha_bar, &mask);
    let state = solve_stokes(&alpha, case)?;
    let (f1, f2) = stokes_forces(&state, case.alpha_bar, &mask);
    let fid = crate::energy::fidelity_integral(phi.field(), &f1, &f2);
    let per = interface_energy(phi.field(), &mask);
    trace.push(IterRecord {
        iter: iterations,
        energy: EnergyReport {
            fidelity: fid,
            perimeter: per,
            total: fid + config.lambda_tilde * per,
            volume: phi.volume(),
            multiplier,
        },
        phi_change_l2: 0.0,
        wall_ms: 0.0,
    });
    dissipation.push(dissipation_energy(&state, &alpha, case.eta));

    Ok(TopoptRun {
        phi,
        trace,
        dissipation,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryMode;
    use approx::assert_abs_diff_eq;

    fn unit_grid(n: usize) -> Grid2D {
        Grid2D::unit(n, BoundaryMode::Mirror).unwrap()
    }

    fn channel_case(peak: f64) -> FlowCase {
        FlowCase {
            eta: 1.0,
            alpha_bar: 1.0,
            beta: 1.0,
            openings: vec![
                Opening {
                    edge: Edge::Left,
                    kind: OpeningKind::Inflow,
                    center: 0.5,
                    height: 1.0,
                    peak,
                },
                Opening {
                    edge: Edge::Right,
                    kind: OpeningKind::Outflow,
                    center: 0.5,
                    height: 1.0,
                    peak,
                },
            ],
            body_force: None,
        }
    }

    #[test]
    fn brinkman_alpha_pure_phases() {
        let g = unit_grid(32);
        let mask = gaussian_kernel_mask(5e-4, &g, 4.0).unwrap();
        let fluid = LevelSetField::new(ScalarField2D::constant(g, 1.0)).unwrap();
        let solid = LevelSetField::new(ScalarField2D::zeros(g)).unwrap();
        for &v in brinkman_alpha(&fluid, 1e4, &mask).values() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
        }
        for &v in brinkman_alpha(&solid, 1e4, &mask).values() {
            assert_abs_diff_eq!(v, 1e4, epsilon = 1e-6);
        }
    }

    #[test]
    fn brinkman_alpha_half_plane_crosses_midvalue_at_interface() {
        let n = 64;
        let g = unit_grid(n);
        let phi = LevelSetField::new(ScalarField2D::from_fn(g, |ix, _| {
            if ix < n / 2 {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let mask = gaussian_kernel_mask(5e-4, &g, 4.0).unwrap();
        let a = brinkman_alpha(&phi, 1e4, &mask);
        // The smoothed step passes alpha_bar/2 between the two cells
        // adjacent to the interface.
        let j = n / 2;
        assert!(a.at(n / 2 - 1, j) < 5e3);
        assert!(a.at(n / 2, j) > 5e3);
        // Symmetric about the interface: a(interface - d) + a(interface + d - 1) = alpha_bar.
        for d in 1..10 {
            assert_abs_diff_eq!(
                a.at(n / 2 - d, j) + a.at(n / 2 + d - 1, j),
                1e4,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn poiseuille_channel_matches_analytic_profile() {
        let n = 96;
        let g = unit_grid(n);
        let case = channel_case(1.0);
        let alpha = ScalarField2D::zeros(g);
        let state = solve_stokes(&alpha, &case).unwrap();

        // Mid-channel vx against the parabola 4 y (1 - y).
        let i = n / 2;
        for j in 0..n {
            let y = (j as f64 + 0.5) * g.h();
            let exact = 4.0 * y * (1.0 - y);
            let got = state.vx_at(i, j);
            assert!(
                (got - exact).abs() <= 0.02 * 1.0,
                "j={j}: vx {got} vs exact {exact}"
            );
        }
        assert!(state.max_divergence() <= 1e-8, "div {}", state.max_divergence());

        // Dissipation against eta * int (v'(y))^2 / 2 = 8/3.
        let d = dissipation_energy(&state, &alpha, case.eta);
        let exact = 8.0 / 3.0;
        assert!(
            (d - exact).abs() / exact < 0.03,
            "dissipation {d} vs {exact}"
        );
    }

    #[test]
    fn all_solid_no_forcing_is_stagnant() {
        let n = 48;
        let g = unit_grid(n);
        let case = FlowCase {
            eta: 1.0,
            alpha_bar: 1e4,
            beta: 0.5,
            openings: vec![],
            body_force: None,
        };
        let alpha = ScalarField2D::constant(g, 1e4);
        let state = solve_stokes(&alpha, &case).unwrap();
        for &v in state.vx.iter().chain(&state.vy) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let (pmin, pmax) = (state.p.min(), state.p.max());
        assert!(pmax - pmin < 1e-10, "pressure must be constant");
    }

    #[test]
    fn forces_on_uniform_and_zero_flow() {
        let n = 32;
        let g = unit_grid(n);
        let mask = gaussian_kernel_mask(5e-4, &g, 4.0).unwrap();
        let zero = StokesState {
            grid: g,
            vx: vec![0.0; (n + 1) * n],
            vy: vec![0.0; n * (n + 1)],
            p: ScalarField2D::zeros(g),
        };
        let (_, f2) = stokes_forces(&zero, 1e4, &mask);
        for &v in f2.values() {
            assert_eq!(v, 0.0);
        }
        let uniform = StokesState {
            grid: g,
            vx: vec![1.0; (n + 1) * n],
            vy: vec![0.0; n * (n + 1)],
            p: ScalarField2D::zeros(g),
        };
        let (f1, f2) = stokes_forces(&uniform, 1e4, &mask);
        for &v in f1.values() {
            assert_eq!(v, 0.0);
        }
        for &v in f2.values() {
            assert_abs_diff_eq!(v, 5e3, epsilon = 1e-6);
        }
        // Rigid translation has zero strain: dissipation only sees alpha.
        let a0 = ScalarField2D::zeros(g);
        assert_abs_diff_eq!(dissipation_energy(&uniform, &a0, 1.0), 0.0, epsilon = 1e-18);
    }

    #[test]
    fn incompatible_flux_is_rejected() {
        let mut case = channel_case(1.0);
        case.openings[1].peak = 0.5;
        assert!(matches!(
            case.validate(),
            Err(Error::IncompatibleFlow(_))
        ));
    }

    #[test]
    fn topology_run_keeps_volume_and_decreases_energy() {
        use rand::{Rng, SeedableRng};
        let n = 48;
        let g = unit_grid(n);
        let h = g.h();
        let case = FlowCase {
            eta: 1.0,
            alpha_bar: 2500.0 / h,
            beta: 0.45,
            openings: vec![
                Opening {
                    edge: Edge::Left,
                    kind: OpeningKind::Inflow,
                    center: 0.5,
                    height: 1.0,
                    peak: 1.0,
                },
                Opening {
                    edge: Edge::Right,
                    kind: OpeningKind::Outflow,
                    center: 0.5,
                    height: 1.0 / 3.0,
                    peak: 3.0,
                },
            ],
            body_force: None,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let phi0 = LevelSetField::clamped(ScalarField2D::from_fn(g, |_, _| rng.gen()));
        let mut cfg = SolverConfig::new(4e-4, case.alpha_bar / 4.0);
        cfg.k_max = 8;
        cfg.epsilon = 1e-9;
        let run = optimize_topology(&case, &cfg, phi0).unwrap();
        let area = g.domain_area();
        for rec in &run.trace {
            assert!(
                (rec.energy.volume - case.beta * area).abs() <= 1e-5 * area,
                "iter {}: volume {} off target",
                rec.iter,
                rec.energy.volume
            );
        }
        for w in run.trace.windows(2) {
            let (a, b) = (w[0].energy.total, w[1].energy.total);
            assert!(
                b <= a * (1.0 + 1e-6) + 1e-12,
                "energy rose {a} -> {b} at iter {}",
                w[1].iter
            );
        }
    }
}
