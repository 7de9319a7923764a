//! Experiment configuration: a TOML document with `model`, `task`,
//! `estimator` and `run` sections.

use std::fmt;
use std::path::Path;

use qep_core::classical::IsingSolver;
use qep_core::energy::Example;
use qep_core::qep::{DegeneracyPolicy, Estimator};
use qep_core::qho::Readout;
use serde::{Deserialize, Serialize};

/// A problem with one configuration field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Random initialisation for a group of weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
}

impl Dist {
    fn validate(&self, path: &str, nonnegative: bool, errors: &mut Vec<FieldError>) {
        match *self {
            Dist::Normal { mean, std } => {
                if !mean.is_finite() || !(std >= 0.0) || !std.is_finite() {
                    errors.push(FieldError::new(path, "normal needs a finite mean and std >= 0"));
                }
                if nonnegative {
                    errors.push(FieldError::new(path, "weights are bounded below by 0; use uniform or constant"));
                }
            }
            Dist::Uniform { low, high } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    errors.push(FieldError::new(path, format!("uniform needs finite low < high, got [{low}, {high})")));
                }
                if nonnegative && low < 0.0 {
                    errors.push(FieldError::new(path, "weights are bounded below by 0; low must be >= 0"));
                }
            }
            Dist::Constant { value } => {
                if !value.is_finite() || (nonnegative && value < 0.0) {
                    errors.push(FieldError::new(path, format!("invalid constant {value}")));
                }
            }
        }
    }
}

fn normal(mean: f64, std: f64) -> Dist {
    Dist::Normal { mean, std }
}

fn uniform(low: f64, high: f64) -> Dist {
    Dist::Uniform { low, high }
}

fn default_spin_init() -> Dist {
    normal(0.0, 0.1)
}

fn default_tfim_coupling_init() -> Dist {
    normal(0.0, 0.5)
}

fn default_tfim_field_init() -> Dist {
    uniform(0.05, 0.3)
}

fn default_positive_init() -> Dist {
    uniform(0.5, 1.5)
}

fn default_hbar() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsingConfig {
    pub spins: usize,
    /// Defaults to all pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    pub input_spins: Vec<usize>,
    pub output_spins: Vec<usize>,
    #[serde(default)]
    pub solver: IsingSolver,
    #[serde(default = "default_spin_init")]
    pub coupling_init: Dist,
    #[serde(default = "default_spin_init")]
    pub field_init: Dist,
    /// Explicit initial weights; overrides the distributions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticConfig {
    pub nodes: usize,
    pub dim: usize,
    /// Defaults to all pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub springs: Option<Vec<[usize; 2]>>,
    pub clamped: Vec<usize>,
    pub outputs: Vec<usize>,
    #[serde(default = "default_positive_init")]
    pub stiffness_init: Dist,
    #[serde(default = "default_positive_init")]
    pub rest_length_init: Dist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Newton tolerance on the gradient norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfimConfig {
    pub spins: usize,
    /// Defaults to all pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<[usize; 2]>>,
    pub input_spins: Vec<usize>,
    pub output_spins: Vec<usize>,
    /// Spin whose Z multiplies each output Z in the cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_reference: Option<usize>,
    #[serde(default = "default_tfim_coupling_init")]
    pub coupling_init: Dist,
    #[serde(default = "default_tfim_field_init")]
    pub field_init: Dist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QhoConfig {
    pub masses: Vec<f64>,
    pub springs: Vec<[usize; 2]>,
    pub pinning: Vec<f64>,
    pub anchors: Vec<f64>,
    #[serde(default)]
    pub input_particles: Vec<usize>,
    pub readouts: Vec<Readout>,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    #[serde(default = "default_positive_init")]
    pub spring_init: Dist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    ClassicalIsing(IsingConfig),
    Elastic(ElasticConfig),
    Tfim(TfimConfig),
    Qho(QhoConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::ClassicalIsing(_) => "classical_ising",
            ModelConfig::Elastic(_) => "elastic",
            ModelConfig::Tfim(_) => "tfim",
            ModelConfig::Qho(_) => "qho",
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(self, ModelConfig::Tfim(_) | ModelConfig::Qho(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Two-bit exclusive or.
    Xor,
    /// `size`-bit parity.
    Parity,
    /// Regression onto the outputs of a randomly drawn teacher network.
    Displacement,
}

fn default_input_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    /// Bits for `parity`, examples for `displacement`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Input amplitude: field offset per set bit (tfim), clamp jitter
    /// (elastic) or anchor range (qho).
    #[serde(default = "default_input_scale")]
    pub input_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Vec<Example>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NudgeModeConfig {
    OneSided,
    #[default]
    Symmetric,
}

fn default_beta() -> f64 {
    0.1
}

fn default_eta() -> f64 {
    0.01
}

fn default_shots() -> usize {
    1000
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub mode: NudgeModeConfig,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Quantum models only.
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_shots")]
    pub shots: usize,
    /// Eigenstate index; 0 is the ground state.
    #[serde(default)]
    pub level: usize,
    /// Defaults to `warn` for training and `error` for gradient checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy: Option<DegeneracyPolicy>,
    /// Finite-difference step of the gradient-check oracle.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Largest relative error accepted by `gradcheck`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            beta: default_beta(),
            mode: NudgeModeConfig::default(),
            eta: default_eta(),
            estimator: Estimator::default(),
            shots: default_shots(),
            level: 0,
            degeneracy: None,
            fd_step: default_fd_step(),
            tolerance: default_tolerance(),
        }
    }
}

fn default_emit_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub epochs: usize,
    pub seed: u64,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default = "default_emit_every")]
    pub emit_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self, Vec<FieldError>> {
        let de = toml::Deserializer::parse(text).map_err(|e| vec![FieldError::new("<document>", e.to_string())])?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<document>".to_string() } else { path };
            vec![FieldError::new(path, e.into_inner().message().trim().to_string())]
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Vec<FieldError>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![FieldError::new("<file>", format!("cannot read {}: {e}", path.display()))])?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every numeric field against the owning model's invariants.
    /// Structural checks that need the built model (index ranges,
    /// connectivity) are reported by [`crate::setup`] under `model`.
    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        let e = &mut errors;
        match &self.model {
            ModelConfig::ClassicalIsing(m) => {
                m.coupling_init.validate("model.coupling_init", false, e);
                m.field_init.validate("model.field_init", false, e);
                if let IsingSolver::Annealing { sweeps: 0, .. } = m.solver {
                    e.push(FieldError::new("model.solver.sweeps", "must be at least 1"));
                }
            }
            ModelConfig::Elastic(m) => {
                m.stiffness_init.validate("model.stiffness_init", true, e);
                m.rest_length_init.validate("model.rest_length_init", true, e);
                if let Some(t) = m.tolerance {
                    if !(t > 0.0) {
                        e.push(FieldError::new("model.tolerance", "must be positive"));
                    }
                }
            }
            ModelConfig::Tfim(m) => {
                m.coupling_init.validate("model.coupling_init", false, e);
                m.field_init.validate("model.field_init", false, e);
            }
            ModelConfig::Qho(m) => {
                m.spring_init.validate("model.spring_init", true, e);
                if !(m.hbar > 0.0) || !m.hbar.is_finite() {
                    e.push(FieldError::new("model.hbar", "must be positive"));
                }
                for (name, v) in [("masses", &m.masses), ("pinning", &m.pinning), ("anchors", &m.anchors)] {
                    if v.len() != m.masses.len() {
                        e.push(FieldError::new(format!("model.{name}"), format!("expected {} entries, got {}", m.masses.len(), v.len())));
                    }
                }
            }
        }
        if let Some(t) = &self.task {
            match (t.generator, &t.dataset) {
                (None, None) => e.push(FieldError::new("task", "set either generator or dataset")),
                (Some(_), Some(_)) => e.push(FieldError::new("task", "generator and dataset are mutually exclusive")),
                (Some(g), None) => {
                    let spin = matches!(self.model, ModelConfig::ClassicalIsing(_) | ModelConfig::Tfim(_));
                    match g {
                        Generator::Xor | Generator::Parity if !spin => {
                            e.push(FieldError::new("task.generator", "xor and parity need a spin model (classical_ising or tfim)"))
                        }
                        Generator::Displacement if spin => {
                            e.push(FieldError::new("task.generator", "displacement needs a continuous model (elastic or qho)"))
                        }
                        _ => {}
                    }
                    if t.size == Some(0) {
                        e.push(FieldError::new("task.size", "must be at least 1"));
                    }
                }
                (None, Some(d)) if d.is_empty() => e.push(FieldError::new("task.dataset", "must not be empty")),
                _ => {}
            }
            if !(t.input_scale > 0.0) || !t.input_scale.is_finite() {
                e.push(FieldError::new("task.input_scale", "must be positive"));
            }
        }
        let est = &self.estimator;
        if est.beta == 0.0 || !est.beta.is_finite() {
            e.push(FieldError::new("estimator.beta", "must be finite and nonzero"));
        }
        if !(est.eta > 0.0) || !est.eta.is_finite() {
            e.push(FieldError::new("estimator.eta", "must be positive"));
        }
        if est.shots == 0 {
            e.push(FieldError::new("estimator.shots", "must be at least 1"));
        }
        if !(est.fd_step > 0.0) || !est.fd_step.is_finite() {
            e.push(FieldError::new("estimator.fd_step", "must be positive"));
        }
        if !(est.tolerance > 0.0) {
            e.push(FieldError::new("estimator.tolerance", "must be positive"));
        }
        if !self.model.is_quantum() {
            if est.estimator == Estimator::Sampled {
                e.push(FieldError::new("estimator.estimator", "sampled estimates need a quantum model"));
            }
            if est.level != 0 {
                e.push(FieldError::new("estimator.level", "eigenstate levels need a quantum model"));
            }
        }
        if matches!(self.model, ModelConfig::Qho(_)) && est.level != 0 {
            e.push(FieldError::new("estimator.level", "oscillator networks support the ground state only"));
        }
        if self.run.emit_every == 0 {
            e.push(FieldError::new("run.emit_every", "must be at least 1"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}
