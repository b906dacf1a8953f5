//! Seeded synthetic scene generator: multi-shape binary images at
//! configurable contrast, with additive Gaussian noise and an optional
//! smooth multiplicative illumination bias for the LIF experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mfopt::{BinaryField, BoundaryMode, Grid2D, ScalarField2D};

use crate::error::{CliError, Result};

/// One shape of the scene, in domain coordinates on [0,1]^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Disk { cx: f64, cy: f64, r: f64 },
    /// Axis-aligned rectangle centered at (cx, cy) with full width `w`
    /// and full height `h`.
    Rect { cx: f64, cy: f64, w: f64, h: f64 },
    Annulus { cx: f64, cy: f64, r_in: f64, r_out: f64 },
}

impl ShapeSpec {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            ShapeSpec::Disk { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            ShapeSpec::Rect { cx, cy, w, h } => {
                (x - cx).abs() <= w / 2.0 && (y - cy).abs() <= h / 2.0
            }
            ShapeSpec::Annulus { cx, cy, r_in, r_out } => {
                let (dx, dy) = (x - cx, y - cy);
                let d2 = dx * dx + dy * dy;
                d2 >= r_in * r_in && d2 <= r_out * r_out
            }
        }
    }

    /// Exact area in domain units, for sanity checks.
    pub fn area(&self) -> f64 {
        match *self {
            ShapeSpec::Disk { r, .. } => std::f64::consts::PI * r * r,
            ShapeSpec::Rect { w, h, .. } => w * h,
            ShapeSpec::Annulus { r_in, r_out, .. } => {
                std::f64::consts::PI * (r_out * r_out - r_in * r_in)
            }
        }
    }
}

/// Resolved generator parameters. Intensity levels are centered:
/// background `(1 - contrast) / 2`, foreground `(1 + contrast) / 2`, so
/// `contrast = 1` gives an exactly binary image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGenSpec {
    pub n: usize,
    pub shapes: Vec<ShapeSpec>,
    pub contrast: f64,
    pub noise_sigma: f64,
    /// Amplitude of the multiplicative illumination gradient
    /// `g(x, y) = 1 - bias * x`; zero disables it.
    pub bias: f64,
    pub seed: u64,
}

/// Generator output: the clean (noise- and bias-free) image, the
/// degraded image actually fed to the solver, and the ground-truth mask.
#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub clean: ScalarField2D,
    pub image: ScalarField2D,
    pub truth: BinaryField,
}

/// Deterministic scene rasterization on an `n x n` mirror-extended grid,
/// sampled at cell centers.
pub fn generate_synthetic_image(spec: &ImageGenSpec) -> Result<SyntheticImage> {
    let grid = Grid2D::unit(spec.n, BoundaryMode::Mirror)?;
    let h = grid.h();
    let center = |i: usize| (i as f64 + 0.5) * h;

    // Reject overlapping shapes: membership is decided per cell center,
    // so the check matches exactly what gets rasterized.
    let mut overlaps: Vec<(usize, usize)> = Vec::new();
    for iy in 0..spec.n {
        for ix in 0..spec.n {
            let (x, y) = (center(ix), center(iy));
            let mut first: Option<usize> = None;
            for (s, shape) in spec.shapes.iter().enumerate() {
                if shape.contains(x, y) {
                    if let Some(f) = first {
                        if !overlaps.contains(&(f, s)) {
                            overlaps.push((f, s));
                        }
                    } else {
                        first = Some(s);
                    }
                }
            }
        }
    }
    if !overlaps.is_empty() {
        let list: Vec<String> = overlaps
            .iter()
            .map(|&(a, b)| format!("shapes[{a}] overlaps shapes[{b}]"))
            .collect();
        return Err(CliError::Config(list.join("; ")));
    }

    let truth = BinaryField::from_indicator(grid, |ix, iy| {
        let (x, y) = (center(ix), center(iy));
        spec.shapes.iter().any(|s| s.contains(x, y))
    });

    let lo = (1.0 - spec.contrast) / 2.0;
    let clean = ScalarField2D::from_fn(grid, |ix, iy| {
        lo + spec.contrast * truth.field().at(ix, iy)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let image = ScalarField2D::from_fn(grid, |ix, iy| {
        let g = 1.0 - spec.bias * center(ix);
        let noise = if spec.noise_sigma > 0.0 {
            spec.noise_sigma * standard_normal(&mut rng)
        } else {
            0.0
        };
        (g * clean.at(ix, iy) + noise).clamp(0.0, 1.0)
    });

    Ok(SyntheticImage {
        clean,
        image,
        truth,
    })
}

/// Box-Muller standard normal deviate.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
