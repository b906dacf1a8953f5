//! Interface-update operators: binary threshold dynamics, the continuous
//! weighted-quantile filter, the quadratic-interpolation filter, and the
//! volume-constrained variant.

use crate::error::{Error, Result};
use crate::grid::{bilinear_sample, Grid2D, ScalarField2D};
use crate::kernel::{extension_table, KernelMask};
use crate::par;

/// Relaxed partition function with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LevelSetField {
    field: ScalarField2D,
}

impl LevelSetField {
    pub fn new(field: ScalarField2D) -> Result<Self> {
        if field.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidGrid(
                "level set values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { field })
    }

    /// Clamp arbitrary values into `[0, 1]`.
    pub fn clamped(mut field: ScalarField2D) -> Self {
        for v in field.values_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Self { field }
    }

    pub fn field(&self) -> &ScalarField2D {
        &self.field
    }

    pub fn into_field(self) -> ScalarField2D {
        self.field
    }

    pub fn grid(&self) -> &Grid2D {
        self.field.grid()
    }

    /// `integral phi dx` over the domain.
    pub fn volume(&self) -> f64 {
        self.field.integral()
    }

    /// Binary field from thresholding at `level`.
    pub fn threshold(&self, level: f64) -> BinaryField {
        let g = *self.field.grid();
        let vals = self
            .field
            .values()
            .iter()
            .map(|&v| if v >= level { 1.0 } else { 0.0 })
            .collect();
        BinaryField {
            field: ScalarField2D::new(g, vals).expect("thresholded field is valid"),
        }
    }
}

/// Characteristic function of a region: every value is exactly 0 or 1.
#[derive(Debug, Clone)]
pub struct BinaryField {
    field: ScalarField2D,
}

impl BinaryField {
    pub fn new(field: ScalarField2D) -> Result<Self> {
        if field.values().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidGrid("binary field values must be 0 or 1".into()));
        }
        Ok(Self { field })
    }

    pub fn from_indicator(grid: Grid2D, inside: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            field: ScalarField2D::from_fn(grid, |ix, iy| if inside(ix, iy) { 1.0 } else { 0.0 }),
        }
    }

    pub fn field(&self) -> &ScalarField2D {
        &self.field
    }

    pub fn into_field(self) -> ScalarField2D {
        self.field
    }

    pub fn as_level_set(&self) -> LevelSetField {
        LevelSetField {
            field: self.field.clone(),
        }
    }

    /// Number of nodes with value 1.
    pub fn count_ones(&self) -> usize {
        self.field.values().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Which interface-update operator a driver runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    BinaryTd,
    WeightedQuantile,
    Quadratic,
}

/// Parameters shared by all drivers.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Diffusion time scale; the kernel radius is `sqrt(2 tau)`.
    pub tau: f64,
    /// Effective fidelity weight, `lambda * sqrt(pi / tau)`.
    pub lambda_tilde: f64,
    /// Circle sample count for the quadratic filter.
    pub m: usize,
    /// Stop when the normalized L2 change drops below this.
    pub epsilon: f64,
    pub k_max: usize,
    pub filter_kind: FilterKind,
    /// Gaussian window truncation in standard deviations.
    pub truncation: f64,
    /// Kernel sample-lattice subdivision: 1 samples at cell centers;
    /// larger values sample on the `1/subdiv`-cell subgrid (bilinear
    /// refinement), which restores sub-cell front motion when
    /// `sqrt(2 tau)` is only a few cells.
    pub kernel_subdiv: u32,
}

impl SolverConfig {
    pub fn new(tau: f64, lambda_tilde: f64) -> Self {
        Self {
            tau,
            lambda_tilde,
            m: 8,
            epsilon: 1e-8,
            k_max: 500,
            filter_kind: FilterKind::WeightedQuantile,
            truncation: 4.0,
            kernel_subdiv: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.lambda_tilde > 0.0) {
            return Err(Error::Config(format!(
                "lambda_tilde = {} must be positive",
                self.lambda_tilde
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon = {} must be positive",
                self.epsilon
            )));
        }
        if self.kernel_subdiv == 0 {
            return Err(Error::Config("kernel_subdiv must be at least 1".into()));
        }
        Ok(())
    }
}

/// Local threshold `T(x) = 1/2 + (F1(x) - F2(x)) / (2 lambda_tilde)`.
///
/// Values are not clamped; the filter operators assign the admissible
/// boundary values `phi = 1` where `T <= 0` and `phi = 0` where `T > 1`.
pub fn threshold_field(f1: &ScalarField2D, f2: &ScalarField2D, lambda_tilde: f64) -> ScalarField2D {
    assert_eq!(f1.grid(), f2.grid(), "fields live on different grids");
    let g = *f1.grid();
    let vals = f1
        .values()
        .iter()
        .zip(f2.values())
        .map(|(a, b)| 0.5 + (a - b) / (2.0 * lambda_tilde))
        .collect();
    ScalarField2D::new(g, vals).expect("threshold field is finite")
}

/// One binary threshold-dynamics step: `u'(x) = 1` iff `(W * u)(x) >= T(x)`.
pub fn binary_td_step(u: &BinaryField, t: &ScalarField2D, mask: &KernelMask) -> BinaryField {
    let conv = crate::kernel::convolve(u.field(), mask);
    let g = *u.field().grid();
    let vals = conv
        .values()
        .iter()
        .zip(t.values())
        .map(|(&c, &tt)| if c >= tt { 1.0 } else { 0.0 })
        .collect();
    BinaryField {
        field: ScalarField2D::new(g, vals).expect("binary step output is valid"),
    }
}

/// Pointwise potential minimized by the quantile update:
/// `J(xi) = sum_j w_j |xi - v_j| + (xi F1 + (1 - xi) F2) / lambda_tilde`.
pub fn pointwise_potential(
    xi: f64,
    neighbors: &[f64],
    weights: &[f64],
    f1: f64,
    f2: f64,
    lambda_tilde: f64,
) -> f64 {
    let spread: f64 = neighbors
        .iter()
        .zip(weights)
        .map(|(&v, &w)| w * (xi - v).abs())
        .sum();
    spread + (xi * f1 + (1.0 - xi) * f2) / lambda_tilde
}

/// Scalar weighted-quantile oracle over an explicit neighborhood.
///
/// For `t` in `(0, 1]`, returns the neighbor value at which the
/// descending cumulative weight first reaches level `t` times the
/// total weight. Out-of-range levels take the filter's admissible-range
/// extension: `t <= 0` yields 1 and `t > 1` yields 0, the boundary
/// values of a level set field, which are the constrained minimizers of
/// the pointwise potential there.
///
/// # Panics
/// Panics if `neighbors` is empty or its length differs from `weights`.
pub fn weighted_quantile_value(neighbors: &[f64], weights: &[f64], t: f64) -> f64 {
    assert!(!neighbors.is_empty(), "empty neighborhood");
    assert_eq!(neighbors.len(), weights.len(), "length mismatch");
    if t <= 0.0 {
        return 1.0;
    }
    if t > 1.0 {
        return 0.0;
    }
    let total: f64 = weights.iter().sum();
    let mut vals = neighbors.to_vec();
    let mut ws = weights.to_vec();
    weighted_quantile_select(&mut vals, &mut ws, t * total)
}

/// Select the value at which the descending cumulative weight first
/// reaches `t`. `vals` and `ws` are scratch and get permuted/compacted.
///
/// Callers handle out-of-range levels before calling; this routine
/// still degrades gracefully on both (maximum / minimum element).
pub(crate) fn weighted_quantile_select(vals: &mut [f64], ws: &mut [f64], t: f64) -> f64 {
    const SMALL: usize = 48;
    const BUCKETS: usize = 128;

    let mut t = t;
    let mut len = vals.len();
    debug_assert!(len > 0);
    let mut bw = [0.0f64; BUCKETS];

    loop {
        let (vals_cur, ws_cur) = (&mut vals[..len], &mut ws[..len]);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in vals_cur.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo < 1e-14 * hi.abs().max(1.0) {
            return hi;
        }
        if len <= SMALL {
            // Sort descending and walk the cumulative weight.
            let mut idx: Vec<usize> = (0..len).collect();
            idx.sort_by(|&a, &b| vals_cur[b].partial_cmp(&vals_cur[a]).unwrap());
            let mut cum = 0.0;
            for &i in &idx {
                cum += ws_cur[i];
                if cum >= t {
                    return vals_cur[i];
                }
            }
            return lo;
        }

        // Bucket pass: find the bucket where the descending cumulative
        // weight crosses t, then recurse into it.
        let scale = BUCKETS as f64 / (hi - lo);
        bw[..].fill(0.0);
        for (&v, &w) in vals_cur.iter().zip(ws_cur.iter()) {
            let b = (((v - lo) * scale) as usize).min(BUCKETS - 1);
            bw[b] += w;
        }
        let mut cum = 0.0;
        let mut target = None;
        for b in (0..BUCKETS).rev() {
            if cum + bw[b] >= t {
                target = Some(b);
                break;
            }
            cum += bw[b];
        }
        let Some(b_star) = target else {
            return lo;
        };
        t -= cum;

        // Compact the target bucket to the front.
        let mut k = 0;
        for i in 0..len {
            let v = vals_cur[i];
            let b = (((v - lo) * scale) as usize).min(BUCKETS - 1);
            if b == b_star {
                vals_cur[k] = v;
                ws_cur[k] = ws_cur[i];
                k += 1;
            }
        }
        debug_assert!(k > 0);
        len = k;
    }
}

/// Neighborhood sampler shared by the quantile and energy operators.
pub(crate) struct Sampler<'a> {
    field: &'a ScalarField2D,
    mask: &'a KernelMask,
    ext_x: Vec<usize>,
    ext_y: Vec<usize>,
    hw_x: i64,
    hw_y: i64,
    /// Precomputed bilinear refinement for subgrid masks: table, row
    /// stride, and the subdivision factor.
    refined: Option<(Vec<f64>, usize, i64)>,
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(field: &'a ScalarField2D, mask: &'a KernelMask) -> Self {
        let grid = field.grid();
        let (mut hw_x, mut hw_y) = (0i64, 0i64);
        for &(dx, dy) in mask.offsets() {
            hw_x = hw_x.max(dx.abs().ceil() as i64 + 1);
            hw_y = hw_y.max(dy.abs().ceil() as i64 + 1);
        }
        let refined = mask.subgrid().map(|(_, s)| {
            let (table, stride) = crate::kernel::refinement_table(field, hw_x, hw_y, s);
            (table, stride, s)
        });
        Self {
            field,
            mask,
            ext_x: extension_table(grid, grid.nx(), hw_x),
            ext_y: extension_table(grid, grid.ny(), hw_y),
            hw_x,
            hw_y,
            refined,
        }
    }

    /// Fill `buf` with the neighbor values of pixel `(ix, iy)` in mask order.
    #[inline]
    pub(crate) fn gather(&self, ix: usize, iy: usize, buf: &mut [f64]) {
        let nx = self.field.grid().nx();
        let src = self.field.values();
        if let Some(ints) = self.mask.integer_offsets() {
            for (o, &(dx, dy)) in buf.iter_mut().zip(ints) {
                let jx = self.ext_x[(ix as i64 + dx + self.hw_x) as usize];
                let jy = self.ext_y[(iy as i64 + dy + self.hw_y) as usize];
                *o = src[jy * nx + jx];
            }
        } else if let (Some((table, stride, s)), Some((fine, _))) =
            (self.refined.as_ref(), self.mask.subgrid())
        {
            let base_x = ix as i64 * s + self.hw_x * s;
            let base_y = iy as i64 * s + self.hw_y * s;
            for (o, &(fx, fy)) in buf.iter_mut().zip(fine) {
                let a = (base_x + fx) as usize;
                let b = (base_y + fy) as usize;
                *o = table[b * stride + a];
            }
        } else {
            for (o, &(dx, dy)) in buf.iter_mut().zip(self.mask.offsets()) {
                *o = bilinear_sample(self.field, ix as f64 + dx, iy as f64 + dy);
            }
        }
    }
}

/// Sliding-window minimum and maximum of `f` over the rectangle
/// `[-hw_x, hw_x] x [-hw_y, hw_y]` (in cells), with boundary extension.
/// Two separable naive passes; windows are small.
fn window_min_max(f: &ScalarField2D, hw_x: i64, hw_y: i64) -> (Vec<f64>, Vec<f64>) {
    let grid = f.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let ext_x = extension_table(grid, nx, hw_x);
    let ext_y = extension_table(grid, ny, hw_y);
    let src = f.values();

    // Horizontal pass.
    let mut row_min = vec![0.0f64; nx * ny];
    let mut row_max = vec![0.0f64; nx * ny];
    for iy in 0..ny {
        let base = iy * nx;
        for ix in 0..nx {
            let mut mn = f64::INFINITY;
            let mut mx = f64::NEG_INFINITY;
            for d in -hw_x..=hw_x {
                let jx = ext_x[(ix as i64 + d + hw_x) as usize];
                let v = src[base + jx];
                mn = mn.min(v);
                mx = mx.max(v);
            }
            row_min[base + ix] = mn;
            row_max[base + ix] = mx;
        }
    }

    // Vertical pass.
    let mut out_min = vec![0.0f64; nx * ny];
    let mut out_max = vec![0.0f64; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let mut mn = f64::INFINITY;
            let mut mx = f64::NEG_INFINITY;
            for d in -hw_y..=hw_y {
                let jy = ext_y[(iy as i64 + d + hw_y) as usize];
                mn = mn.min(row_min[jy * nx + ix]);
                mx = mx.max(row_max[jy * nx + ix]);
            }
            out_min[iy * nx + ix] = mn;
            out_max[iy * nx + ix] = mx;
        }
    }
    (out_min, out_max)
}

/// Core of the weighted-quantile update with a per-pixel threshold.
///
/// Returns the new field together with the interaction sum of the *input*
/// field, `sum_x sum_j w_j |phi(x) - phi(x + y_j)|` (no `h^2` factor),
/// which comes for free from the gathered neighborhoods.
fn quantile_core(
    phi: &ScalarField2D,
    threshold_at: &(impl Fn(usize) -> f64 + Sync),
    mask: &KernelMask,
) -> (ScalarField2D, f64) {
    let grid = *phi.grid();
    let nx = grid.nx();
    let ny = grid.ny();
    let sampler = Sampler::new(phi, mask);
    let weights = mask.weights();
    let m = mask.len();
    // Every sample (bilinear included) lies in the convex hull of the
    // window values, so a constant window short-circuits the pixel: the
    // quantile is the constant and the interaction contribution is zero.
    let (wmin, wmax) = window_min_max(phi, sampler.hw_x, sampler.hw_y);

    let mut out = ScalarField2D::zeros(grid);
    let mut partials = vec![0.0f64; ny];
    par::rows_with_partials(
        out.values_mut(),
        &mut partials,
        nx,
        || (vec![0.0f64; m], vec![0.0f64; m]),
        |(vbuf, wbuf), iy, row| {
            let mut inter = 0.0;
            for (ix, o) in row.iter_mut().enumerate() {
                let center = phi.at(ix, iy);
                let idx = iy * nx + ix;
                let (mn, mx);
                if wmax[idx] - wmin[idx] == 0.0 {
                    mn = center;
                    mx = center;
                } else {
                    sampler.gather(ix, iy, vbuf);
                    let mut vmn = f64::INFINITY;
                    let mut vmx = f64::NEG_INFINITY;
                    let mut wsum = 0.0;
                    for (&v, &w) in vbuf.iter().zip(weights) {
                        vmn = vmn.min(v);
                        vmx = vmx.max(v);
                        wsum += w * (center - v).abs();
                    }
                    inter += wsum;
                    mn = vmn;
                    mx = vmx;
                }

                let t = threshold_at(iy * nx + ix);
                // Out-of-range levels assign the boundary of the
                // admissible range [0, 1]: there the potential's slope
                // does not change sign past the neighbor hull, so the
                // constrained minimizer sits at phi = 1 (T <= 0) or
                // phi = 0 (T > 1). This matches binary_td_step, which
                // thresholds W*u in [0, 1] against T, and is what makes
                // converged iterates exactly binary.
                *o = if t <= 0.0 {
                    1.0
                } else if t > 1.0 {
                    0.0
                } else if mx - mn == 0.0 {
                    mx
                } else {
                    wbuf.copy_from_slice(weights);
                    weighted_quantile_select(vbuf, wbuf, t)
                };
            }
            inter
        },
    );
    let interaction: f64 = partials.iter().sum();
    (out, interaction)
}

/// Continuous median-filter step: at each node, select the weighted
/// quantile of the neighborhood at level `T(x)`.
pub fn weighted_quantile_step(
    phi: &LevelSetField,
    t: &ScalarField2D,
    mask: &KernelMask,
) -> LevelSetField {
    weighted_quantile_step_with_interaction(phi, t, mask).0
}

/// Same as [`weighted_quantile_step`] but also returns the interaction sum
/// `sum_x sum_j w_j |phi(x) - phi(x+y_j)|` of the input iterate (no `h^2`).
pub fn weighted_quantile_step_with_interaction(
    phi: &LevelSetField,
    t: &ScalarField2D,
    mask: &KernelMask,
) -> (LevelSetField, f64) {
    assert_eq!(phi.grid(), t.grid(), "fields live on different grids");
    let tv = t.values();
    let (out, inter) = quantile_core(phi.field(), &|idx| tv[idx], mask);
    (
        LevelSetField { field: out },
        inter,
    )
}

/// Quantile step with a scalar offset added to the threshold field.
fn quantile_step_offset(
    phi: &LevelSetField,
    t: &ScalarField2D,
    mask: &KernelMask,
    offset: f64,
) -> LevelSetField {
    let tv = t.values();
    let (out, _) = quantile_core(phi.field(), &|idx| tv[idx] + offset, mask);
    LevelSetField { field: out }
}

/// Volume-constrained median-filter step.
///
/// Runs the weighted-quantile update with threshold `T + Lambda`, where the
/// multiplier `Lambda` is found by bisection so the new volume matches
/// `v_target` within `tol * |Omega|`. The volume is non-increasing in
/// `Lambda`: a larger offset raises the threshold and shrinks super-level
/// sets.
pub fn volume_constrained_step(
    phi: &LevelSetField,
    t: &ScalarField2D,
    mask: &KernelMask,
    v_target: f64,
    tol: f64,
) -> Result<(LevelSetField, f64)> {
    volume_constrained_step_from(phi, t, mask, v_target, tol, 0.0)
}

/// [`volume_constrained_step`] with a warm-start multiplier guess; drivers
/// pass the previous iteration's multiplier to shrink the bracket search.
pub fn volume_constrained_step_from(
    phi: &LevelSetField,
    t: &ScalarField2D,
    mask: &KernelMask,
    v_target: f64,
    tol: f64,
    lambda_guess: f64,
) -> Result<(LevelSetField, f64)> {
    const LAMBDA_LO: f64 = -2.0;
    const LAMBDA_HI: f64 = 2.0;
    const MAX_BISECT: usize = 60;

    let area = phi.grid().domain_area();
    if !(v_target > 0.0) || v_target > area * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "target volume {v_target} outside (0, |Omega| = {area}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol = {tol} must be positive")));
    }
    let vol_tol = tol * area;

    // Constraint saturation: the whole domain is the region.
    if v_target >= area * (1.0 - 1e-12) {
        return Ok((
            LevelSetField {
                field: ScalarField2D::constant(*phi.grid(), 1.0),
            },
            LAMBDA_LO,
        ));
    }

    let eval = |lam: f64| -> (LevelSetField, f64) {
        let out = quantile_step_offset(phi, t, mask, lam);
        let vol = out.volume();
        (out, vol)
    };

    // Bracket around the warm start, growing toward [-2, 2]; V is
    // non-increasing in lambda, so we need V(lo) >= target >= V(hi).
    let guess = lambda_guess.clamp(LAMBDA_LO, LAMBDA_HI);
    let mut lo = (guess - 0.25).max(LAMBDA_LO);
    let mut hi = (guess + 0.25).min(LAMBDA_HI);
    let (out, vol) = eval(lo);
    if (vol - v_target).abs() <= vol_tol {
        return Ok((out, lo));
    }
    let (mut lo_field, mut lo_vol) = (out, vol);
    let (out, vol) = eval(hi);
    if (vol - v_target).abs() <= vol_tol {
        return Ok((out, hi));
    }
    let (mut hi_field, mut hi_vol) = (out, vol);
    let mut grow = 0.5;
    while lo_vol < v_target && lo > LAMBDA_LO {
        lo = (lo - grow).max(LAMBDA_LO);
        grow *= 2.0;
        let (out, vol) = eval(lo);
        if (vol - v_target).abs() <= vol_tol {
            return Ok((out, lo));
        }
        (lo_field, lo_vol) = (out, vol);
    }
    grow = 0.5;
    while hi_vol > v_target && hi < LAMBDA_HI {
        hi = (hi + grow).min(LAMBDA_HI);
        grow *= 2.0;
        let (out, vol) = eval(hi);
        if (vol - v_target).abs() <= vol_tol {
            return Ok((out, hi));
        }
        (hi_field, hi_vol) = (out, vol);
    }
    if lo_vol < v_target || hi_vol > v_target {
        return Err(Error::VolumeUnreachable {
            lo: LAMBDA_LO,
            hi: LAMBDA_HI,
        });
    }

    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        let (out, vol) = eval(mid);
        if (vol - v_target).abs() <= vol_tol {
            return Ok((out, mid));
        }
        if vol > v_target {
            (lo, lo_field, lo_vol) = (mid, out, vol);
        } else {
            (hi, hi_field, hi_vol) = (mid, out, vol);
        }
        if hi - lo < 1e-14 * (1.0 + lo.abs()) {
            break;
        }
    }

    // The bracket has collapsed onto a jump of the volume staircase. The
    // nodes where the two bracket fields differ sit exactly at a quantile
    // tie, where every value between the two candidates minimizes the
    // pointwise potential; blending the fields there hits the target
    // volume without leaving the minimizer set.
    let denom = lo_vol - hi_vol;
    if denom <= 0.0 {
        return Err(Error::VolumeUnreachable {
            lo: LAMBDA_LO,
            hi: LAMBDA_HI,
        });
    }
    let theta = ((v_target - hi_vol) / denom).clamp(0.0, 1.0);
    let grid = *phi.grid();
    let blended = ScalarField2D::new(
        grid,
        lo_field
            .field()
            .values()
            .iter()
            .zip(hi_field.field().values())
            .map(|(&a, &b)| theta * a + (1.0 - theta) * b)
            .collect(),
    )
    .expect("blend of valid fields is valid");
    let out = LevelSetField::new(blended).expect("blend stays in [0, 1]");
    let vol = out.volume();
    if (vol - v_target).abs() > vol_tol {
        return Err(Error::VolumeUnreachable {
            lo: LAMBDA_LO,
            hi: LAMBDA_HI,
        });
    }
    Ok((out, 0.5 * (lo + hi)))
}

/// Quantile update via per-segment quadratic interpolation on the circle
/// of radius `sqrt(2 tau)` with 8 equidistant samples.
pub fn quadratic_quantile_step(
    phi: &LevelSetField,
    t: &ScalarField2D,
    tau: f64,
) -> Result<LevelSetField> {
    const M: usize = 8;
    let grid = *phi.grid();
    let h = grid.h();
    let radius = (2.0 * tau).sqrt();
    if radius < h {
        return Err(Error::RadiusBelowResolution { radius, h });
    }
    let r_cells = radius / h;
    let angles: Vec<(f64, f64)> = (0..M)
        .map(|j| {
            let th = 2.0 * std::f64::consts::PI * j as f64 / M as f64;
            (r_cells * th.cos(), r_cells * th.sin())
        })
        .collect();

    let nx = grid.nx();
    let field = phi.field();
    let tv = t.values();
    let mut out = ScalarField2D::zeros(grid);
    par::for_each_row(out.values_mut(), nx, |iy, row| {
        let mut samples = [0.0f64; M];
        for (ix, o) in row.iter_mut().enumerate() {
            for (s, &(dx, dy)) in samples.iter_mut().zip(&angles) {
                *s = bilinear_sample(field, ix as f64 + dx, iy as f64 + dy);
            }
            let t_val = tv[iy * nx + ix];
            // Same admissible-range extension as the discrete filter:
            // out-of-range levels snap to the boundary of [0, 1].
            *o = if t_val <= 0.0 {
                1.0
            } else if t_val > 1.0 {
                0.0
            } else {
                circle_quantile(&samples, t_val)
            };
        }
    });
    Ok(LevelSetField { field: out })
}

/// Quantile at level `t` of the piecewise-quadratic reconstruction through
/// 8 circle samples (4 segments, endpoints + midpoint each).
///
/// Solves `|{theta : P(theta) >= phi*}| = 2 pi t` — equivalently the
/// sub-level measure equals `2 pi (1 - t)` — by bisection on
/// `[min samples, max samples]`.
fn circle_quantile(samples: &[f64; 8], t: f64) -> f64 {
    let mn = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if t <= 0.0 || mx - mn == 0.0 {
        return mx;
    }
    if t >= 1.0 {
        return mn;
    }
    let seg_len = std::f64::consts::PI / 2.0;
    let target = 2.0 * std::f64::consts::PI * (1.0 - t);

    let sublevel_measure = |c: f64| -> f64 {
        let mut total = 0.0;
        for i in 0..4 {
            let v0 = samples[2 * i];
            let vm = samples[2 * i + 1];
            let v1 = samples[(2 * i + 2) % 8];
            total += segment_sublevel(v0, vm, v1, seg_len, c);
        }
        total
    };

    let (mut lo, mut hi) = (mn, mx);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if sublevel_measure(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Measure of `{s in [0, len] : P(s) < c}` for the quadratic through
/// `(0, v0)`, `(len/2, vm)`, `(len, v1)`.
fn segment_sublevel(v0: f64, vm: f64, v1: f64, len: f64, c: f64) -> f64 {
    let a = (2.0 * v0 - 4.0 * vm + 2.0 * v1) / (len * len);
    let b = (4.0 * vm - 3.0 * v0 - v1) / len;
    let scale = v0.abs().max(vm.abs()).max(v1.abs()).max(1.0);
    let eps = 1e-13 * scale;

    // q(s) = a s^2 + b s + (v0 - c); sub-level set is where q < 0.
    let q = |s: f64| a * s * s + b * s + (v0 - c);

    let mut cuts = [0.0f64; 4];
    let mut n_cuts = 0;
    let push = |s: f64, cuts: &mut [f64; 4], n: &mut usize| {
        if s > 0.0 && s < len {
            cuts[*n] = s;
            *n += 1;
        }
    };
    if a.abs() * len * len > eps {
        let disc = b * b - 4.0 * a * (v0 - c);
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Numerically stable quadratic roots.
            let q0 = -0.5 * (b + b.signum() * sq);
            let (r1, r2) = if q0 != 0.0 {
                (q0 / a, (v0 - c) / q0)
            } else {
                (0.0, 0.0)
            };
            push(r1.min(r2), &mut cuts, &mut n_cuts);
            push(r1.max(r2), &mut cuts, &mut n_cuts);
        }
    } else if b.abs() * len > eps {
        push((c - v0) / b, &mut cuts, &mut n_cuts);
    } else {
        // Degenerate flat segment: full arc iff the node value lies below c.
        return if v0 < c { len } else { 0.0 };
    }

    let mut pts = [0.0f64; 6];
    pts[0] = 0.0;
    pts[1..1 + n_cuts].copy_from_slice(&cuts[..n_cuts]);
    pts[1 + n_cuts] = len;
    let n_pts = n_cuts + 2;
    pts[..n_pts].sort_by(|x, y| x.partial_cmp(y).unwrap());

    let mut measure = 0.0;
    for w in pts[..n_pts].windows(2) {
        let (s0, s1) = (w[0], w[1]);
        if s1 > s0 && q(0.5 * (s0 + s1)) < 0.0 {
            measure += s1 - s0;
        }
    }
    measure
}
