//! Experiment drivers: one function per preset family, writing the
//! artifact set (trace.csv, PGM snapshots, histograms, manifest) into
//! the configured output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfopt::segmentation::{segment, FidelityModel, IterRecord, SegmentationRun};
use mfopt::stokes::optimize_topology;
use mfopt::{
    BinaryField, BoundaryMode, Grid2D, LevelSetField, ScalarField2D, SolverConfig,
};

use crate::config::{
    ExperimentConfig, FidelityName, FilterKindName, InitSpec, PinningSection, Preset,
};
use crate::error::{CliError, Result};
use crate::io;
use crate::synth::{generate_synthetic_image, SyntheticImage};

/// Build the initial level set for a segmentation run.
pub fn initial_level_set(init: &InitSpec, grid: Grid2D) -> LevelSetField {
    let h = grid.h();
    let center = |i: usize| (i as f64 + 0.5) * h;
    match *init {
        InitSpec::Square { side, ramp } => {
            if ramp <= 0.0 {
                BinaryField::from_indicator(grid, |ix, iy| {
                    (center(ix) - 0.5).abs() <= side / 2.0 && (center(iy) - 0.5).abs() <= side / 2.0
                })
                .as_level_set()
            } else {
                // Linear profile in the signed distance to the square
                // contour, 1/2 on the contour, full transition over
                // `2 * ramp` cells.
                let w = ramp * h;
                LevelSetField::clamped(ScalarField2D::from_fn(grid, |ix, iy| {
                    let qx = (center(ix) - 0.5).abs() - side / 2.0;
                    let qy = (center(iy) - 0.5).abs() - side / 2.0;
                    let sd_out =
                        (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt() + qx.max(qy).min(0.0);
                    0.5 - sd_out / w
                }))
            }
        }
        InitSpec::Cone => {
            // 1 at the domain center, linear decay to 0 at the corners.
            let corner = (0.5f64.powi(2) + 0.5f64.powi(2)).sqrt();
            LevelSetField::clamped(ScalarField2D::from_fn(grid, |ix, iy| {
                let dx = center(ix) - 0.5;
                let dy = center(iy) - 0.5;
                1.0 - (dx * dx + dy * dy).sqrt() / corner
            }))
        }
        InitSpec::Disk { cx, cy, r } => BinaryField::from_indicator(grid, |ix, iy| {
            let dx = center(ix) - cx;
            let dy = center(iy) - cy;
            dx * dx + dy * dy <= r * r
        })
        .as_level_set(),
        InitSpec::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            LevelSetField::clamped(ScalarField2D::from_fn(grid, |_, _| rng.gen()))
        }
    }
}

pub fn fidelity_model(cfg: &ExperimentConfig) -> FidelityModel {
    match cfg.fidelity {
        FidelityName::ChanVese => FidelityModel::ChanVese,
        FidelityName::Lif => FidelityModel::Lif {
            sigma: cfg.lif_sigma,
        },
        FidelityName::None => FidelityModel::None,
    }
}

/// Run `segment` in checkpoint-delimited chunks, invoking the callback
/// with the iterate at each checkpoint. Trace rows are renumbered to a
/// single global iteration count; duplicate boundary rows are dropped.
pub fn segment_with_checkpoints(
    img: &ScalarField2D,
    phi0: LevelSetField,
    config: &SolverConfig,
    model: FidelityModel,
    checkpoints: &[usize],
    mut on_checkpoint: impl FnMut(usize, &LevelSetField) -> Result<()>,
) -> Result<SegmentationRun> {
    let mut bounds: Vec<usize> = checkpoints
        .iter()
        .copied()
        .filter(|&k| k > 0 && k < config.k_max)
        .collect();
    bounds.sort_unstable();
    bounds.dedup();
    bounds.push(config.k_max);

    let mut phi = phi0;
    let mut trace: Vec<IterRecord> = Vec::new();
    let mut done = 0usize;
    let mut converged = false;
    for &stop in &bounds {
        let mut chunk_cfg = config.clone();
        chunk_cfg.k_max = stop - done;
        let run = segment(img, phi, &chunk_cfg, model)?;
        phi = run.phi;
        // The chunk's closing row equals the next chunk's opening row
        // (same iterate, parameters refit deterministically), so keep it
        // only on the last chunk.
        let keep = if run.converged || stop == config.k_max {
            run.trace.len()
        } else {
            run.trace.len().saturating_sub(1)
        };
        trace.extend(run.trace[..keep].iter().map(|r| IterRecord {
            iter: r.iter + done,
            ..*r
        }));
        done += run.iterations;
        if run.converged {
            converged = true;
            break;
        }
        if stop != config.k_max {
            on_checkpoint(done, &phi)?;
        }
    }
    Ok(SegmentationRun {
        phi,
        trace,
        iterations: done,
        converged,
    })
}

/// Outcome handed back to callers (the acceptance suite reads both the
/// artifacts on disk and these in-memory results).
pub struct RunOutcome {
    pub out_dir: PathBuf,
    /// Per-arm segmentation runs: (label, run). Single-arm presets have
    /// exactly one entry labelled "main".
    pub runs: Vec<(String, SegmentationRun)>,
    /// Stokes dissipation history, when applicable.
    pub dissipation: Vec<f64>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out_dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    let started = Instant::now();
    let mut outcome = match cfg.preset {
        Preset::PinningCompare => run_pinning(cfg, &out_dir),
        Preset::StokesContraction | Preset::StokesDoublePipe => run_topopt(cfg, &out_dir),
        _ => run_single_segmentation(cfg, &out_dir),
    }?;
    let mut entries = cfg.manifest_entries();
    entries.push((
        "runtime.wall_ms".into(),
        format!("{}", started.elapsed().as_millis()),
    ));
    for (label, run) in &outcome.runs {
        entries.push((
            format!("runtime.{label}.iterations"),
            run.iterations.to_string(),
        ));
        entries.push((
            format!("runtime.{label}.converged"),
            run.converged.to_string(),
        ));
    }
    entries.sort();
    io::write_manifest(&out_dir.join("manifest.txt"), &entries)?;
    outcome.out_dir = out_dir;
    Ok(outcome)
}

fn scene(cfg: &ExperimentConfig) -> Result<SyntheticImage> {
    let gen = cfg
        .image_gen
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [image_gen]".into()))?;
    generate_synthetic_image(&gen.to_spec())
}

fn run_single_segmentation(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let img = scene(cfg)?;
    io::write_pgm(&out.join("image.pgm"), &img.image)?;
    io::write_pgm(&out.join("clean.pgm"), &img.clean)?;
    io::write_pgm(&out.join("truth.pgm"), img.truth.field())?;

    let grid = *img.image.grid();
    let phi0 = initial_level_set(&cfg.init, grid);
    io::write_pgm(&out.join("phi_initial.pgm"), phi0.field())?;

    let solver = cfg.solver.to_solver_config();
    let model = fidelity_model(cfg);
    let run = segment_with_checkpoints(
        &img.image,
        phi0,
        &solver,
        model,
        &cfg.checkpoints,
        |k, phi| {
            io::write_pgm(&out.join(format!("phi_k{k:04}.pgm")), phi.field())?;
            io::write_histogram(&out.join(format!("hist_k{k:04}.csv")), phi, 64)
        },
    )?;

    io::write_trace_csv(&out.join("trace.csv"), &run.trace)?;
    io::write_pgm(&out.join("phi_final.pgm"), run.phi.field())?;
    io::write_histogram(&out.join("hist_final.csv"), &run.phi, 64)?;
    Ok(RunOutcome {
        out_dir: out.to_path_buf(),
        runs: vec![("main".into(), run)],
        dissipation: vec![],
    })
}

fn method_name(kind: FilterKindName) -> &'static str {
    match kind {
        FilterKindName::BinaryTd => "binary_td",
        FilterKindName::WeightedQuantile => "weighted_quantile",
        FilterKindName::Quadratic => "quadratic",
    }
}

fn run_pinning(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let pin: &PinningSection = cfg
        .pinning
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [pinning]".into()))?;
    let img = scene(cfg)?;
    io::write_pgm(&out.join("image.pgm"), &img.image)?;
    io::write_pgm(&out.join("truth.pgm"), img.truth.field())?;

    let grid = *img.image.grid();
    let phi0 = initial_level_set(&cfg.init, grid);
    let initial_mask = phi0.threshold(0.5);
    io::write_pgm(&out.join("mask_initial.pgm"), initial_mask.field())?;

    let tau_min = pin.taus.iter().cloned().fold(f64::INFINITY, f64::min);
    let pixels = grid.node_count() as f64;
    let mut summary = String::from("method,tau,symm_diff_initial_frac,jaccard_truth\n");
    let mut runs = Vec::new();
    for &tau in &pin.taus {
        for kind in [FilterKindName::BinaryTd, FilterKindName::WeightedQuantile] {
            let mut solver = cfg.solver.to_solver_config();
            solver.tau = tau;
            solver.filter_kind = kind.into();
            solver.k_max = if tau == tau_min {
                pin.iters_fine
            } else {
                pin.iters_coarse
            };
            // Narrow kernels quantize the quantile to the cell-center
            // value set, which pins even the continuous filter; sample
            // on the half-cell lattice once the kernel radius drops
            // below four cells.
            solver.kernel_subdiv = if (2.0 * tau).sqrt() < 4.0 * grid.h() {
                2
            } else {
                1
            };
            let run = segment(&img.image, phi0.clone(), &solver, fidelity_model(cfg))?;
            let label = format!("{}_tau{:e}", method_name(kind), tau);
            let mask = run.phi.threshold(0.5);
            io::write_pgm(&out.join(format!("mask_{label}.pgm")), mask.field())?;
            io::write_trace_csv(&out.join(format!("trace_{label}.csv")), &run.trace)?;
            let sd = symmetric_difference(&mask, &initial_mask) as f64 / pixels;
            let jac = jaccard(&mask, &img.truth);
            summary.push_str(&format!("{},{:e},{},{}\n", method_name(kind), tau, sd, jac));
            // Headline arm: the continuous filter at the smallest tau.
            if tau == tau_min && kind == FilterKindName::WeightedQuantile {
                io::write_trace_csv(&out.join("trace.csv"), &run.trace)?;
                io::write_pgm(&out.join("phi_final.pgm"), run.phi.field())?;
                io::write_histogram(&out.join("hist_final.csv"), &run.phi, 64)?;
            }
            runs.push((label, run));
        }
    }
    std::fs::write(out.join("summary.csv"), summary)?;
    Ok(RunOutcome {
        out_dir: out.to_path_buf(),
        runs,
        dissipation: vec![],
    })
}

pub fn symmetric_difference(a: &BinaryField, b: &BinaryField) -> usize {
    a.field()
        .values()
        .iter()
        .zip(b.field().values())
        .filter(|(&x, &y)| x != y)
        .count()
}

pub fn jaccard(a: &BinaryField, b: &BinaryField) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.field().values().iter().zip(b.field().values()) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn run_topopt(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let flow = cfg
        .flow
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [flow]".into()))?;
    let case = flow.to_flow_case();
    let grid = Grid2D::unit(flow.n, BoundaryMode::Mirror)?;
    let mut phi0 = initial_level_set(
        &InitSpec::Random {
            seed: flow.phi0_seed,
        },
        grid,
    );
    if flow.symmetrize_phi0 {
        // Mirror-average about the horizontal midline. The Stokes solve,
        // thresholding, and volume correction all commute with this
        // reflection when the openings do, so every iterate inherits the
        // symmetry of the initial guess.
        let f = phi0.field().clone();
        let ny = grid.ny();
        phi0 = LevelSetField::clamped(ScalarField2D::from_fn(grid, |ix, iy| {
            0.5 * (f.at(ix, iy) + f.at(ix, ny - 1 - iy))
        }));
    }
    io::write_pgm(&out.join("phi_initial.pgm"), phi0.field())?;

    let solver = cfg.solver.to_solver_config();
    let run = optimize_topology(&case, &solver, phi0)?;
    io::write_trace_csv(&out.join("trace.csv"), &run.trace)?;
    io::write_pgm(&out.join("phi_final.pgm"), run.phi.field())?;
    io::write_histogram(&out.join("hist_final.csv"), &run.phi, 64)?;
    let mut diss = String::from("iter,dissipation\n");
    for (k, d) in run.dissipation.iter().enumerate() {
        diss.push_str(&format!("{k},{d}\n"));
    }
    std::fs::write(out.join("dissipation.csv"), diss)?;
    Ok(RunOutcome {
        out_dir: out.to_path_buf(),
        runs: vec![(
            "main".into(),
            SegmentationRun {
                phi: run.phi,
                trace: run.trace,
                iterations: run.iterations,
                converged: run.converged,
            },
        )],
        dissipation: run.dissipation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_init_hits_center_and_corners() {
        let g = Grid2D::unit(64, BoundaryMode::Mirror).unwrap();
        let phi = initial_level_set(&InitSpec::Cone, g);
        let center = phi.field().at(32, 32);
        let corner = phi.field().at(0, 0);
        assert!(center > 0.98, "center = {center}");
        assert!(corner < 0.02, "corner = {corner}");
    }

    #[test]
    fn checkpoints_do_not_change_the_final_iterate() {
        use crate::synth::{ImageGenSpec, ShapeSpec};
        let spec = ImageGenSpec {
            n: 48,
            shapes: vec![ShapeSpec::Disk {
                cx: 0.5,
                cy: 0.5,
                r: 0.25,
            }],
            contrast: 1.0,
            noise_sigma: 0.05,
            bias: 0.0,
            seed: 3,
        };
        let img = generate_synthetic_image(&spec).unwrap();
        let g = *img.image.grid();
        let phi0 = initial_level_set(&InitSpec::Square { side: 0.9, ramp: 0.0 }, g);
        let mut solver = SolverConfig::new(5e-4, 0.6);
        solver.k_max = 12;
        let whole = segment(&img.image, phi0.clone(), &solver, FidelityModel::ChanVese).unwrap();
        let mut hits = Vec::new();
        let chunked = segment_with_checkpoints(
            &img.image,
            phi0,
            &solver,
            FidelityModel::ChanVese,
            &[4, 9],
            |k, _| {
                hits.push(k);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(hits, vec![4, 9]);
        assert_eq!(whole.phi.field().values(), chunked.phi.field().values());
        assert_eq!(whole.trace.len(), chunked.trace.len());
        for (a, b) in whole.trace.iter().zip(&chunked.trace) {
            assert_eq!(a.iter, b.iter);
            assert_eq!(a.energy.total, b.energy.total);
        }
    }
}
