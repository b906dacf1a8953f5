//! Experiment configuration: preset defaults, TOML file loading, and
//! dotted-path `--set key=value` overrides.
//!
//! Resolution order is fixed: preset defaults, then the optional config
//! file, then `--set` overrides, then the `--out`/`--seed`/`--threads`
//! CLI flags. Every resolved value is echoed to the run manifest.

use serde::{Deserialize, Serialize};

use mfopt::stokes::{Edge, FlowCase, Opening, OpeningKind};
use mfopt::{FilterKind, SolverConfig};

use crate::error::{CliError, Result};
use crate::synth::{ImageGenSpec, ShapeSpec};

/// The six built-in experiment families plus a free-form escape hatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    PinningCompare,
    Sharpness,
    QuadraticDemo,
    LifDemo,
    StokesContraction,
    StokesDoublePipe,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::PinningCompare,
        Preset::Sharpness,
        Preset::QuadraticDemo,
        Preset::LifDemo,
        Preset::StokesContraction,
        Preset::StokesDoublePipe,
        Preset::Custom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::PinningCompare => "pinning_compare",
            Preset::Sharpness => "sharpness",
            Preset::QuadraticDemo => "quadratic_demo",
            Preset::LifDemo => "lif_demo",
            Preset::StokesContraction => "stokes_contraction",
            Preset::StokesDoublePipe => "stokes_double_pipe",
            Preset::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Preset> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown preset `{s}`")))
    }

    pub fn is_stokes(&self) -> bool {
        matches!(self, Preset::StokesContraction | Preset::StokesDoublePipe)
    }
}

/// Serializable mirror of [`mfopt::FilterKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKindName {
    BinaryTd,
    WeightedQuantile,
    Quadratic,
}

impl From<FilterKindName> for FilterKind {
    fn from(k: FilterKindName) -> FilterKind {
        match k {
            FilterKindName::BinaryTd => FilterKind::BinaryTd,
            FilterKindName::WeightedQuantile => FilterKind::WeightedQuantile,
            FilterKindName::Quadratic => FilterKind::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tau: f64,
    pub lambda_tilde: f64,
    pub m: usize,
    pub epsilon: f64,
    pub k_max: usize,
    pub filter_kind: FilterKindName,
    pub truncation: f64,
    /// Kernel sample-lattice subdivision (1 = cell centers).
    #[serde(default = "default_kernel_subdiv")]
    pub kernel_subdiv: u32,
}

fn default_kernel_subdiv() -> u32 {
    1
}

impl SolverSection {
    pub fn to_solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.tau, self.lambda_tilde);
        cfg.m = self.m;
        cfg.epsilon = self.epsilon;
        cfg.k_max = self.k_max;
        cfg.filter_kind = self.filter_kind.into();
        cfg.truncation = self.truncation;
        cfg.kernel_subdiv = self.kernel_subdiv;
        cfg
    }
}

/// Which fidelity model drives a segmentation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityName {
    ChanVese,
    Lif,
    /// Pure curvature motion (no image term).
    None,
}

/// Initial level set for segmentation runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Centered axis-aligned square with the given side length (domain
    /// units). With `ramp = 0` this is the binary indicator; a positive
    /// `ramp` (in cells) mollifies the contour with a linear profile of
    /// that half-width, which gives the continuous filter sub-cell
    /// resolution while thresholding at 1/2 recovers the same square.
    Square {
        side: f64,
        #[serde(default)]
        ramp: f64,
    },
    /// Cone `phi0(x) = max(0, 1 - |x - c| / |corner - c|)`: 1 at the
    /// domain center, decaying linearly to 0 at the corners.
    Cone,
    /// Binary indicator of a disk.
    Disk { cx: f64, cy: f64, r: f64 },
    /// Independent uniform values in [0, 1].
    Random { seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageGenSection {
    pub n: usize,
    pub shapes: Vec<ShapeSpec>,
    pub contrast: f64,
    pub noise_sigma: f64,
    pub bias: f64,
    pub seed: u64,
}

impl ImageGenSection {
    pub fn to_spec(&self) -> ImageGenSpec {
        ImageGenSpec {
            n: self.n,
            shapes: self.shapes.clone(),
            contrast: self.contrast,
            noise_sigma: self.noise_sigma,
            bias: self.bias,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeName {
    Left,
    Right,
    Bottom,
    Top,
}

impl From<EdgeName> for Edge {
    fn from(e: EdgeName) -> Edge {
        match e {
            EdgeName::Left => Edge::Left,
            EdgeName::Right => Edge::Right,
            EdgeName::Bottom => Edge::Bottom,
            EdgeName::Top => Edge::Top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpeningKindName {
    Inflow,
    Outflow,
}

impl From<OpeningKindName> for OpeningKind {
    fn from(k: OpeningKindName) -> OpeningKind {
        match k {
            OpeningKindName::Inflow => OpeningKind::Inflow,
            OpeningKindName::Outflow => OpeningKind::Outflow,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeningSection {
    pub edge: EdgeName,
    pub kind: OpeningKindName,
    pub center: f64,
    pub height: f64,
    pub peak: f64,
}

impl OpeningSection {
    pub fn to_opening(&self) -> Opening {
        Opening {
            edge: self.edge.into(),
            kind: self.kind.into(),
            center: self.center,
            height: self.height,
            peak: self.peak,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub n: usize,
    pub eta: f64,
    /// Solid-phase Brinkman coefficient upper bound.
    pub alpha_bar: f64,
    /// Fluid volume fraction.
    pub beta: f64,
    pub openings: Vec<OpeningSection>,
    /// Seed for the random initial level set.
    pub phi0_seed: u64,
    /// Mirror-average the random initial level set about the horizontal
    /// midline. With openings placed symmetrically, every subsequent iterate
    /// of the deterministic solver then stays mirror-symmetric.
    #[serde(default)]
    pub symmetrize_phi0: bool,
}

impl FlowSection {
    pub fn to_flow_case(&self) -> FlowCase {
        FlowCase {
            eta: self.eta,
            alpha_bar: self.alpha_bar,
            beta: self.beta,
            openings: self.openings.iter().map(|o| o.to_opening()).collect(),
            body_force: None,
        }
    }
}

/// Extra knobs for the pinning comparison sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinningSection {
    /// Time-step ladder; each tau is run with both filter methods.
    pub taus: Vec<f64>,
    /// Iteration budget for the smallest tau (the headline arm).
    pub iters_fine: usize,
    /// Iteration budget for the remaining taus.
    pub iters_coarse: usize,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub output_dir: String,
    pub solver: SolverSection,
    /// Segmentation fidelity model (segmentation presets only).
    pub fidelity: FidelityName,
    /// LIF window standard deviation, in domain units.
    pub lif_sigma: f64,
    /// Initial level set for segmentation presets.
    pub init: InitSpec,
    /// Iteration indices at which phi snapshots / histograms are written;
    /// the final iterate is always included.
    pub checkpoints: Vec<usize>,
    pub image_gen: Option<ImageGenSection>,
    pub flow: Option<FlowSection>,
    pub pinning: Option<PinningSection>,
}

/// The shared two-shape test scene: one disk and one rectangle inside
/// a margin, mutually disjoint.
fn default_scene() -> Vec<ShapeSpec> {
    vec![
        ShapeSpec::Disk {
            cx: 0.35,
            cy: 0.40,
            r: 0.20,
        },
        ShapeSpec::Rect {
            cx: 0.68,
            cy: 0.66,
            w: 0.22,
            h: 0.26,
        },
    ]
}

fn default_image_gen() -> ImageGenSection {
    ImageGenSection {
        n: 128,
        shapes: default_scene(),
        contrast: 1.0,
        noise_sigma: 0.05,
        bias: 0.0,
        seed: 7,
    }
}

fn solver_defaults(tau: f64, lambda_tilde: f64) -> SolverSection {
    SolverSection {
        tau,
        lambda_tilde,
        m: 8,
        epsilon: 1e-8,
        k_max: 200,
        filter_kind: FilterKindName::WeightedQuantile,
        truncation: 4.0,
        kernel_subdiv: 1,
    }
}

impl ExperimentConfig {
    /// Defaults for a preset; `custom` starts from the sharpness layout.
    pub fn default_for(preset: Preset) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            preset,
            output_dir: format!("out/{}", preset.name()),
            solver: solver_defaults(1e-3, 0.6),
            fidelity: FidelityName::ChanVese,
            lif_sigma: 0.08,
            init: InitSpec::Square { side: 0.9, ramp: 0.0 },
            checkpoints: vec![],
            image_gen: Some(default_image_gen()),
            flow: None,
            pinning: None,
        };
        match preset {
            Preset::PinningCompare => {
                cfg.solver = solver_defaults(1e-4, 0.6);
                // The sweep's wide kernels dominate runtime; a 3-sigma
                // window keeps the whole ladder inside the time budget.
                cfg.solver.truncation = 3.0;
                cfg.solver.epsilon = 1e-7;
                // Side chosen so the square's edges fall on cell
                // boundaries (116 of 128 cells): the nearest cell
                // centers then sit half a cell from the interface,
                // which is the configuration the binary scheme pins on.
                // The 3-cell ramp mollifies the contour for the
                // continuous filter only; thresholding recovers the
                // exact square.
                let side = 116.0 / 128.0;
                cfg.init = InitSpec::Square { side, ramp: 3.0 };
                let gen = cfg.image_gen.as_mut().unwrap();
                gen.noise_sigma = 0.05;
                // Bright anchor disks under the square's four corners:
                // the corner cells of a discrete square always flip
                // under an isotropic kernel (their convolution is far
                // below any admissible threshold), which would nucleate
                // an erosion cascade and mask the pinning contrast.
                // Image content that attracts those pixels to the
                // foreground freezes the corners for the binary scheme.
                for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                    gen.shapes.push(ShapeSpec::Disk {
                        cx: 0.5 + sx * side / 2.0,
                        cy: 0.5 + sy * side / 2.0,
                        r: 0.06,
                    });
                }
                cfg.pinning = Some(PinningSection {
                    taus: vec![9e-4, 7e-4, 5e-4, 3e-4, 1e-4],
                    iters_fine: 200,
                    iters_coarse: 60,
                });
            }
            Preset::Sharpness => {
                cfg.solver = solver_defaults(1e-3, 0.6);
                cfg.init = InitSpec::Cone;
                cfg.checkpoints = vec![1, 2, 4];
                // A single large disk keeps the foreground mean high
                // enough for the background threshold to leave (0, 1]
                // and snap the iterate to exact extremes.
                let gen = cfg.image_gen.as_mut().unwrap();
                gen.shapes = vec![ShapeSpec::Disk {
                    cx: 0.5,
                    cy: 0.5,
                    r: 0.35,
                }];
                gen.noise_sigma = 0.03;
            }
            Preset::QuadraticDemo => {
                cfg.solver = solver_defaults(5e-4, 0.6);
                cfg.solver.filter_kind = FilterKindName::Quadratic;
                cfg.solver.k_max = 90;
                cfg.checkpoints = vec![20, 40, 60, 90];
            }
            Preset::LifDemo => {
                cfg.solver = solver_defaults(4e-4, 0.6);
                cfg.solver.k_max = 120;
                cfg.fidelity = FidelityName::Lif;
                let gen = cfg.image_gen.as_mut().unwrap();
                gen.bias = 0.6;
                gen.noise_sigma = 0.02;
            }
            Preset::StokesContraction => {
                let n = 96;
                let alpha_bar = 2500.0 * n as f64; // alpha_bar = 2500 / h
                cfg.solver = solver_defaults(1e-3, alpha_bar / 4.0);
                cfg.solver.epsilon = 1e-6;
                cfg.solver.k_max = 40;
                cfg.image_gen = None;
                cfg.flow = Some(FlowSection {
                    n,
                    eta: 1.0,
                    alpha_bar,
                    beta: 0.45,
                    openings: vec![
                        OpeningSection {
                            edge: EdgeName::Left,
                            kind: OpeningKindName::Inflow,
                            center: 0.5,
                            height: 1.0,
                            peak: 1.0,
                        },
                        OpeningSection {
                            edge: EdgeName::Right,
                            kind: OpeningKindName::Outflow,
                            center: 0.5,
                            height: 1.0 / 3.0,
                            peak: 3.0,
                        },
                    ],
                    phi0_seed: 42,
                    symmetrize_phi0: false,
                });
            }
            Preset::StokesDoublePipe => {
                let n = 96;
                let alpha_bar = 2500.0 * n as f64;
                cfg.solver = solver_defaults(1e-3, alpha_bar / 4.0);
                cfg.solver.epsilon = 1e-6;
                cfg.solver.k_max = 40;
                cfg.image_gen = None;
                // Peak speed 3 matches the contraction outlet and gives
                // the openings enough momentum to carve channels through
                // the random initial mixture before the perimeter term
                // can pinch them off.
                let opening = |edge, kind, center| OpeningSection {
                    edge,
                    kind,
                    center,
                    height: 1.0 / 6.0,
                    peak: 3.0,
                };
                cfg.flow = Some(FlowSection {
                    n,
                    eta: 1.0,
                    alpha_bar,
                    beta: 0.35,
                    openings: vec![
                        opening(EdgeName::Left, OpeningKindName::Inflow, 0.25),
                        opening(EdgeName::Left, OpeningKindName::Inflow, 0.75),
                        opening(EdgeName::Right, OpeningKindName::Outflow, 0.25),
                        opening(EdgeName::Right, OpeningKindName::Outflow, 0.75),
                    ],
                    phi0_seed: 42,
                    symmetrize_phi0: true,
                });
            }
            Preset::Custom => {}
        }
        cfg
    }

    /// Load: preset defaults <- optional TOML file <- `--set` overrides.
    pub fn resolve(
        preset: Preset,
        config_file: Option<&str>,
        sets: &[String],
    ) -> Result<ExperimentConfig> {
        let defaults = toml::Value::try_from(ExperimentConfig::default_for(preset))
            .map_err(|e| CliError::Config(format!("internal default serialization: {e}")))?;
        let mut merged = defaults;
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config `{path}`: {e}")))?;
            let file_val: toml::Value = text
                .parse()
                .map_err(|e| CliError::Config(format!("TOML parse error in `{path}`: {e}")))?;
            merge_toml(&mut merged, file_val);
        }
        for kv in sets {
            apply_set(&mut merged, kv)?;
        }
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver
            .to_solver_config()
            .validate()
            .map_err(CliError::Lib)?;
        if self.preset.is_stokes() {
            let flow = self
                .flow
                .as_ref()
                .ok_or_else(|| CliError::Config("stokes preset requires [flow]".into()))?;
            if flow.n < 4 {
                return Err(CliError::Config("flow.n must be at least 4".into()));
            }
            flow.to_flow_case().validate().map_err(CliError::Lib)?;
        } else {
            let gen = self.image_gen.as_ref().ok_or_else(|| {
                CliError::Config("segmentation preset requires [image_gen]".into())
            })?;
            if gen.n < 4 {
                return Err(CliError::Config("image_gen.n must be at least 4".into()));
            }
            if !(0.0..=1.0).contains(&gen.contrast) || gen.contrast <= 0.0 {
                return Err(CliError::Config("contrast must lie in (0, 1]".into()));
            }
            if gen.noise_sigma < 0.0 || gen.bias < 0.0 || gen.bias >= 1.0 {
                return Err(CliError::Config(
                    "noise_sigma must be >= 0 and bias in [0, 1)".into(),
                ));
            }
            if self.fidelity == FidelityName::Lif && self.lif_sigma <= 0.0 {
                return Err(CliError::Config("lif_sigma must be positive".into()));
            }
            if let Some(pin) = &self.pinning {
                if pin.taus.is_empty() {
                    return Err(CliError::Config("pinning.taus must be non-empty".into()));
                }
            }
        }
        Ok(())
    }

    /// Flat `key = value` listing of every resolved parameter, for the
    /// run manifest.
    pub fn manifest_entries(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut out = Vec::new();
        flatten_toml("", &value, &mut out);
        out.sort();
        out
    }
}

/// Recursive right-biased merge; tables merge key-wise, everything else
/// is replaced wholesale (arrays included).
fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply one `--set dotted.path=value` override. The value is parsed as
/// TOML if possible (numbers, booleans, arrays, inline tables), falling
/// back to a bare string.
fn apply_set(root: &mut toml::Value, kv: &str) -> Result<()> {
    let (path, raw) = kv
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{kv}`")))?;
    let value: toml::Value = match format!("x = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                cur = t
                    .entry(seg.to_string())
                    .or_insert(toml::Value::Table(toml::Table::new()));
            }
            toml::Value::Array(a) => {
                let idx: usize = seg.parse().map_err(|_| {
                    CliError::Config(format!("`{seg}` is not an array index in `{path}`"))
                })?;
                let slot = a.get_mut(idx).ok_or_else(|| {
                    CliError::Config(format!("index {idx} out of bounds in `{path}`"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                cur = slot;
            }
            _ => {
                return Err(CliError::Config(format!(
                    "`{path}` descends into a scalar at `{seg}`"
                )))
            }
        }
    }
    unreachable!("loop returns on the last segment")
}

fn flatten_toml(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_toml(&key, v, out);
            }
        }
        toml::Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                flatten_toml(&format!("{prefix}.{i}"), v, out);
            }
        }
        v => out.push((prefix.to_string(), v.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_preset() {
        for p in Preset::ALL {
            ExperimentConfig::default_for(p).validate().unwrap();
        }
    }

    #[test]
    fn set_overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::resolve(
            Preset::Sharpness,
            None,
            &[
                "solver.tau=2e-3".to_string(),
                "image_gen.noise_sigma=0.1".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.solver.tau, 2e-3);
        assert_eq!(cfg.image_gen.unwrap().noise_sigma, 0.1);
    }

    #[test]
    fn bad_override_path_is_rejected() {
        let err = ExperimentConfig::resolve(
            Preset::Sharpness,
            None,
            &["solver.tau.deep=1".to_string()],
        )
        .unwrap_err();
        assert!(format!("{err}").contains("scalar"));
    }

    #[test]
    fn manifest_lists_nested_keys() {
        let cfg = ExperimentConfig::default_for(Preset::StokesContraction);
        let entries = cfg.manifest_entries();
        assert!(entries.iter().any(|(k, _)| k == "flow.beta"));
        assert!(entries.iter().any(|(k, _)| k == "solver.lambda_tilde"));
    }
}
