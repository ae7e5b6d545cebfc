//! Run configuration: a TOML document with one table per concern.
//!
//! Every table rejects unknown keys. Errors carry the dotted key and, when it
//! can be located in the source text, the 1-based line.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Configuration used when none is given: a moderately coupled two-layer
/// basin at `N = 32`.
pub const DEFAULT_CONFIG: &str = r#"[grid]
n = 32

[model]
f1 = 1.0
f2 = 1.0
beta = 0.5
nu = 0.01
r = 0.05

[time]
t_final = 1.0
"#;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub event: EventConfig,
    #[serde(default)]
    pub action: ActionConfig,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub skeleton: SkeletonConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub ldp: LdpConfig,
    #[serde(default)]
    pub weak: WeakConfig,
    #[serde(default)]
    pub increments: IncrementConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_dealias")]
    pub dealias: String,
}

fn default_length() -> f64 {
    std::f64::consts::PI
}

fn default_dealias() -> String {
    "3/2".into()
}

/// Nondimensional model parameters. `f1`, `f2` and `r` are omitted when a
/// `[physical]` table supplies them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default)]
    pub beta: f64,
    /// Decoupled layers: `F1 = F2 = 0` is allowed.
    #[serde(default)]
    pub barotropic: bool,
    #[serde(default = "yes")]
    pub nonlinear: bool,
    /// Top-layer forcing as `[j, k, amplitude]` triples on sine modes.
    #[serde(default)]
    pub forcing: Vec<[f64; 3]>,
    #[serde(default)]
    pub scheme: SchemeName,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            f1: None,
            f2: None,
            r: None,
            nu: None,
            beta: 0.0,
            barotropic: false,
            nonlinear: true,
            forcing: Vec::new(),
            scheme: SchemeName::Imex1,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Imex1,
    Imex2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    pub f0: f64,
    pub g: f64,
    pub h1: f64,
    pub h2: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub nu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "default_decay")]
    pub s: f64,
    #[serde(default)]
    pub modes: ModesSpec,
    #[serde(default)]
    pub kind: SigmaName,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "half")]
    pub b: f64,
    /// Intensity multiplying controls; defaults to the noise intensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilde_kind: Option<SigmaName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilde_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilde_b: Option<f64>,
    #[serde(default)]
    pub layers: LayersName,
    #[serde(default = "unit_pair")]
    pub layer_scale: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            s: default_decay(),
            modes: ModesSpec::default(),
            kind: SigmaName::Additive,
            a: 1.0,
            b: 0.5,
            tilde_kind: None,
            tilde_a: None,
            tilde_b: None,
            layers: LayersName::Both,
            layer_scale: [1.0, 1.0],
        }
    }
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_decay() -> f64 {
    1.5
}

fn unit_pair() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaName {
    #[default]
    Additive,
    Multiplicative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayersName {
    #[default]
    Both,
    Top,
    Bottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModesSpec {
    Count(usize),
    Keyword(ModesKeyword),
}

impl Default for ModesSpec {
    fn default() -> Self {
        ModesSpec::Keyword(ModesKeyword::Default)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModesKeyword {
    Default,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    #[serde(default)]
    pub dt: DtSpec,
    /// Write a field snapshot every this many steps (0: final state only).
    #[serde(default)]
    pub snapshot_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSpec {
    Fixed(f64),
    Keyword(AutoKeyword),
}

impl Default for DtSpec {
    fn default() -> Self {
        DtSpec::Keyword(AutoKeyword::Auto)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    #[serde(default = "default_seed")]
    pub base: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { base: default_seed() }
    }
}

fn default_seed() -> u64 {
    20240601
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn default_dir() -> String {
    "qg2-run".into()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    #[default]
    Zero,
    Mode,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub kind: InitialKind,
    #[serde(default)]
    pub layer: usize,
    #[serde(default = "one_usize")]
    pub j: usize,
    #[serde(default = "one_usize")]
    pub k: usize,
    /// Sine coefficient for `mode`, L² norm for `random`.
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            kind: InitialKind::Zero,
            layer: 0,
            j: 1,
            k: 1,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    #[default]
    Mode,
    L2,
    RunningMaxL2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionName {
    #[default]
    Above,
    Below,
}

/// Rare event `{Φ ≥ τ}` or `{Φ ≤ τ}`; also the level target of the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    #[serde(default)]
    pub observable: ObservableName,
    #[serde(default)]
    pub layer: usize,
    #[serde(default = "one_usize")]
    pub j: usize,
    #[serde(default = "one_usize")]
    pub k: usize,
    #[serde(default = "one")]
    pub threshold: f64,
    #[serde(default)]
    pub direction: DirectionName,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            observable: ObservableName::Mode,
            layer: 0,
            j: 1,
            k: 1,
            threshold: 1.0,
            direction: DirectionName::Above,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// The `[event]` level set.
    #[default]
    Event,
    /// Ball around the endpoint of the uncontrolled skeleton.
    Ball,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    #[serde(default)]
    pub target: TargetKind,
    /// Ball target: field snapshot holding the center; the uncontrolled
    /// endpoint when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_center: Option<String>,
    #[serde(default)]
    pub ball_radius: f64,
    #[serde(default = "default_nt")]
    pub n_t: usize,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_max_stages")]
    pub max_stages: usize,
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            target: TargetKind::Event,
            ball_center: None,
            ball_radius: 0.0,
            n_t: default_nt(),
            mu: 1.0,
            cap: None,
            tolerance: None,
            max_iters: default_max_iters(),
            max_stages: default_max_stages(),
            memory: default_memory(),
            grad_tol: default_grad_tol(),
        }
    }
}

fn default_nt() -> usize {
    65
}

fn default_max_iters() -> usize {
    2000
}

fn default_max_stages() -> usize {
    40
}

fn default_memory() -> usize {
    12
}

fn default_grad_tol() -> f64 {
    1e-9
}

/// Drift shift or control used by a study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlSource {
    #[default]
    Zero,
    /// Minimizer of the `[action]` problem.
    Instanton,
    /// `amplitude` on the first retained mode of the first active layer.
    Constant,
    /// Control snapshot at `control_path`.
    File,
}

/// Single stochastic path for `simulate-sde`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    #[serde(default = "tenth")]
    pub eps: f64,
    #[serde(default)]
    pub trajectory: u64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            trajectory: 0,
        }
    }
}

/// Control for the `skeleton` subcommand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonConfig {
    #[serde(default)]
    pub control: ControlSource,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "half")]
    pub eps: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Shift for `is`.
    #[serde(default = "instanton")]
    pub shift: ControlSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_path: Option<String>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            eps: 0.5,
            paths: default_paths(),
            shift: ControlSource::Instanton,
            control_path: None,
        }
    }
}

fn default_paths() -> usize {
    1000
}

fn instanton() -> ControlSource {
    ControlSource::Instanton
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorName {
    Crude,
    #[default]
    Importance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    #[serde(default = "default_ldp_eps")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_ldp_paths")]
    pub paths: usize,
    #[serde(default)]
    pub estimator: EstimatorName,
    /// Largest accepted relative gap at the smallest `eps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Default for LdpConfig {
    fn default() -> Self {
        Self {
            eps_grid: default_ldp_eps(),
            paths: default_ldp_paths(),
            estimator: EstimatorName::Importance,
            tolerance: None,
        }
    }
}

fn default_ldp_eps() -> Vec<f64> {
    vec![0.5, 0.3, 0.2]
}

fn default_ldp_paths() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakConfig {
    #[serde(default = "default_weak_eps")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_weak_paths")]
    pub paths: usize,
    #[serde(default = "constant")]
    pub control: ControlSource,
    #[serde(default = "half")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_path: Option<String>,
    #[serde(default = "default_slope")]
    pub slope_range: [f64; 2],
}

impl Default for WeakConfig {
    fn default() -> Self {
        Self {
            eps_grid: default_weak_eps(),
            paths: default_weak_paths(),
            control: ControlSource::Constant,
            amplitude: 0.5,
            control_path: None,
            slope_range: default_slope(),
        }
    }
}

fn default_weak_eps() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

fn default_weak_paths() -> usize {
    200
}

fn constant() -> ControlSource {
    ControlSource::Constant
}

fn default_slope() -> [f64; 2] {
    [0.8, 1.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementConfig {
    #[serde(default = "tenth")]
    pub eps: f64,
    #[serde(default = "default_min_level")]
    pub min_level: u32,
    #[serde(default = "default_max_level")]
    pub max_level: u32,
    /// Simulation steps per horizon are `2^fine_level`.
    #[serde(default = "default_fine_level")]
    pub fine_level: u32,
    #[serde(default = "default_inc_paths")]
    pub paths: usize,
    /// Threshold `N` of the conditioning set; `inf` disables it.
    #[serde(default = "infinite")]
    pub threshold: f64,
    #[serde(default = "zero_ctrl")]
    pub control: ControlSource,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_path: Option<String>,
}

impl Default for IncrementConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            min_level: default_min_level(),
            max_level: default_max_level(),
            fine_level: default_fine_level(),
            paths: default_inc_paths(),
            threshold: f64::INFINITY,
            control: ControlSource::Zero,
            amplitude: 0.0,
            control_path: None,
        }
    }
}

fn tenth() -> f64 {
    0.1
}

fn default_min_level() -> u32 {
    2
}

fn default_max_level() -> u32 {
    8
}

fn default_fine_level() -> u32 {
    10
}

fn default_inc_paths() -> usize {
    50
}

fn infinite() -> f64 {
    f64::INFINITY
}

fn zero_ctrl() -> ControlSource {
    ControlSource::Zero
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    #[serde(default = "tenth")]
    pub eps: f64,
    /// `‖ξ‖` ladder: `points` values evenly spaced on `[min_norm, max_norm]`.
    #[serde(default = "half")]
    pub min_norm: f64,
    #[serde(default = "default_max_norm")]
    pub max_norm: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_energy_paths")]
    pub paths: usize,
    #[serde(default)]
    pub shape_seed: u64,
    #[serde(default = "default_r2")]
    pub min_r2: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            min_norm: 0.5,
            max_norm: default_max_norm(),
            points: default_points(),
            paths: default_energy_paths(),
            shape_seed: 0,
            min_r2: default_r2(),
        }
    }
}

fn default_max_norm() -> f64 {
    5.0
}

fn default_points() -> usize {
    10
}

fn default_energy_paths() -> usize {
    8
}

fn default_r2() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_jac_n")]
    pub jacobian_n: usize,
    #[serde(default = "default_pairs")]
    pub jacobian_pairs: usize,
    #[serde(default = "default_jac_tol")]
    pub jacobian_tol: f64,
    #[serde(default = "default_elliptic_n")]
    pub elliptic_n: [usize; 2],
    #[serde(default = "default_elliptic_states")]
    pub elliptic_states: usize,
    #[serde(default = "default_elliptic_tol")]
    pub elliptic_tol: f64,
    #[serde(default = "default_pairs")]
    pub inversion_states: usize,
    #[serde(default = "default_inversion_tol")]
    pub inversion_tol: f64,
    #[serde(default = "default_energy_samples")]
    pub energy_samples: usize,
    #[serde(default = "default_energy_steps")]
    pub energy_steps: usize,
    #[serde(default = "default_pairs")]
    pub assumption_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            jacobian_n: default_jac_n(),
            jacobian_pairs: default_pairs(),
            jacobian_tol: default_jac_tol(),
            elliptic_n: default_elliptic_n(),
            elliptic_states: default_elliptic_states(),
            elliptic_tol: default_elliptic_tol(),
            inversion_states: default_pairs(),
            inversion_tol: default_inversion_tol(),
            energy_samples: default_energy_samples(),
            energy_steps: default_energy_steps(),
            assumption_samples: default_pairs(),
        }
    }
}

fn default_jac_n() -> usize {
    64
}

fn default_pairs() -> usize {
    100
}

fn default_jac_tol() -> f64 {
    1e-8
}

fn default_elliptic_n() -> [usize; 2] {
    [32, 64]
}

fn default_elliptic_states() -> usize {
    1000
}

fn default_elliptic_tol() -> f64 {
    0.05
}

fn default_inversion_tol() -> f64 {
    1e-12
}

fn default_energy_samples() -> usize {
    20
}

fn default_energy_steps() -> usize {
    200
}

/// Configuration problem, located by dotted key and source line.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.key, self.line) {
            (Some(k), Some(l)) => write!(f, "`{k}` (line {l}): {}", self.message),
            (Some(k), None) => write!(f, "`{k}`: {}", self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn at(src: &str, key: &str, message: impl Into<String>) -> Self {
        Self {
            key: Some(key.to_string()),
            line: locate(src, key),
            message: message.into(),
        }
    }
}

/// Line of `section.key` (or of a `[section]` header) in TOML text.
pub fn locate(src: &str, dotted: &str) -> Option<usize> {
    let (section, key) = match dotted.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            if current == dotted {
                return Some(i + 1);
            }
            if current == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs = lhs.trim();
        let full = if current.is_empty() {
            lhs.to_string()
        } else {
            format!("{current}.{lhs}")
        };
        if full == dotted || (current == section && lhs == key) {
            return Some(i + 1);
        }
    }
    header_line
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses and validates a configuration document.
pub fn from_toml_str(src: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(src, s.start));
        let key = e.span().and_then(|s| {
            let text = src.get(s.clone())?.trim();
            let name = text.split('=').next()?.trim().trim_matches(['[', ']']);
            (!name.is_empty() && name.len() < 64 && !name.contains('\n')).then(|| name.to_string())
        });
        ConfigError {
            key,
            line,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate(src)?;
    Ok(cfg)
}

/// Applies `section.key=value` overrides to TOML text. Values are parsed as
/// TOML when possible and taken as strings otherwise.
pub fn apply_overrides(src: &str, sets: &[String]) -> Result<String, ConfigError> {
    if sets.is_empty() {
        return Ok(src.to_string());
    }
    let mut doc: toml::Table = src.parse().map_err(|e: toml::de::Error| ConfigError {
        key: None,
        line: e.span().map(|s| line_of_offset(src, s.start)),
        message: e.message().to_string(),
    })?;
    for set in sets {
        let (path, raw) = set.split_once('=').ok_or_else(|| ConfigError {
            key: Some(set.clone()),
            line: None,
            message: "override must look like section.key=value".into(),
        })?;
        let value = parse_value(raw.trim());
        let parts: Vec<&str> = path.trim().split('.').collect();
        let mut table = &mut doc;
        for p in &parts[..parts.len() - 1] {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| ConfigError {
                key: Some(path.to_string()),
                line: None,
                message: format!("`{p}` is not a table"),
            })?;
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(toml::to_string(&doc).expect("tables serialize"))
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Canonical TOML echo with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self, src: &str) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| Err(ConfigError::at(src, key, msg));
        if self.grid.n < 2 {
            return err("grid.n", format!("need at least 2 modes per direction, got {}", self.grid.n));
        }
        if !(self.grid.length > 0.0) || !self.grid.length.is_finite() {
            return err("grid.length", format!("must be positive, got {}", self.grid.length));
        }
        if self.grid.dealias.parse::<qg2_core::spectral::Dealias>().is_err() {
            return err("grid.dealias", format!("expected a ratio such as \"3/2\", got `{}`", self.grid.dealias));
        }
        let m = &self.model;
        match &self.physical {
            Some(p) => {
                for (name, v) in [("f1", m.f1), ("f2", m.f2), ("r", m.r), ("nu", m.nu)] {
                    if v.is_some() {
                        return err(
                            &format!("model.{name}"),
                            "give either model parameters or a [physical] table, not both".into(),
                        );
                    }
                }
                if !(p.rho2 > p.rho1) {
                    return err(
                        "physical.rho2",
                        format!("stratification requires rho2 > rho1, got rho1 = {}, rho2 = {}", p.rho1, p.rho2),
                    );
                }
                for (name, v) in [
                    ("f0", p.f0),
                    ("g", p.g),
                    ("h1", p.h1),
                    ("h2", p.h2),
                    ("rho0", p.rho0),
                    ("nu", p.nu),
                ] {
                    if !(v > 0.0) || !v.is_finite() {
                        return err(&format!("physical.{name}"), format!("must be positive, got {v}"));
                    }
                }
            }
            None => {
                if m.nu.is_none() {
                    return err("model.nu", "missing required key (or give a [physical] table)".into());
                }
                if !m.barotropic {
                    for name in ["f1", "f2"] {
                        let v = if name == "f1" { m.f1 } else { m.f2 };
                        if v.is_none() {
                            return err(
                                &format!("model.{name}"),
                                "missing required key (or give a [physical] table)".into(),
                            );
                        }
                    }
                }
            }
        }
        if let DtSpec::Fixed(dt) = self.time.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return err("time.dt", format!("must be positive or \"auto\", got {dt}"));
            }
        }
        if !(self.time.t_final > 0.0) || !self.time.t_final.is_finite() {
            return err("time.t_final", format!("must be positive, got {}", self.time.t_final));
        }
        if !(self.sde.eps >= 0.0) || !self.sde.eps.is_finite() {
            return err("sde.eps", format!("must be non-negative, got {}", self.sde.eps));
        }
        if self.mc.paths < 100 {
            return err("mc.paths", format!("need at least 100 paths, got {}", self.mc.paths));
        }
        if self.ldp.eps_grid.windows(2).any(|w| !(w[1] < w[0])) || self.ldp.eps_grid.is_empty() {
            return err("ldp.eps_grid", "must be non-empty and strictly decreasing".into());
        }
        if self.increments.min_level >= self.increments.max_level
            || self.increments.max_level > self.increments.fine_level
        {
            return err(
                "increments.max_level",
                "need min_level < max_level <= fine_level".into(),
            );
        }
        if self.action.n_t < 2 {
            return err("action.n_t", format!("need at least 2 nodes, got {}", self.action.n_t));
        }
        if !(self.action.mu > 0.0) {
            return err("action.mu", format!("must be positive, got {}", self.action.mu));
        }
        if !(self.action.ball_radius >= 0.0) {
            return err("action.ball_radius", format!("must be non-negative, got {}", self.action.ball_radius));
        }
        Ok(())
    }
}
