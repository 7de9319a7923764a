//! Subcommand implementations. Each writes its record under an output
//! directory and returns it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qep_core::energy::{self, EnergyModel, GradientEstimate, NudgeConfig, NudgeMode, WeightVector, RELATIVE_ERROR_FLOOR};
use qep_core::hilbert::measure::MIN_BRANCH_PROBABILITY;
use qep_core::hilbert::{self, pauli, FamilySampler, HermitianOperator, JointDecomposition, DEGENERACY_GAP};
use qep_core::qep::{self, DegeneracyPolicy, Estimator, QepConfig, QepNudge, QuantumModel, SHOT_CHUNK};
use qep_core::rng::StreamKey;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FieldError, NudgeModeConfig};
use crate::error::CliError;
use crate::setup::{Experiment, Model};

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const SPECTRUM_FILE: &str = "spectrum.json";
pub const HISTOGRAM_FILE: &str = "histogram.json";

/// Relative error bound for the analytic energy weight gradient.
pub const ENERGY_GRADIENT_TOLERANCE: f64 = 1e-5;

/// Stream for the gradient check's sampled estimate.
const GRADCHECK_STREAM: u64 = u64::MAX - 1;
/// Stream for `sample`.
const SAMPLE_STREAM: u64 = u64::MAX - 2;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("records serialize");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn quantum_config(cfg: &ExperimentConfig, default_policy: DegeneracyPolicy) -> QepConfig {
    let e = &cfg.estimator;
    QepConfig {
        beta: e.beta,
        shots: e.shots,
        estimator: e.estimator,
        nudge: match e.mode {
            NudgeModeConfig::OneSided => QepNudge::OneSided,
            NudgeModeConfig::Symmetric => QepNudge::Symmetric,
        },
        level: e.level,
        eta: e.eta,
        seed: cfg.run.seed,
        degeneracy: e.degeneracy.unwrap_or(default_policy),
    }
}

fn classical_nudge(beta: f64, mode: NudgeModeConfig) -> Result<NudgeConfig, CliError> {
    let mode = match mode {
        NudgeModeConfig::OneSided => NudgeMode::OneSidedPositive,
        NudgeModeConfig::Symmetric => NudgeMode::Symmetric,
    };
    NudgeConfig::new(beta, mode).map_err(|e| CliError::Config(vec![FieldError::new("estimator.beta", e.to_string())]))
}

fn require_task(exp: &Experiment, command: &str) -> Result<(), CliError> {
    if exp.data.is_empty() {
        return Err(CliError::Config(vec![FieldError::new("task", format!("{command} needs a task section"))]));
    }
    Ok(())
}

/// One line of `metrics.ndjson`. Field order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub mean_cost: f64,
    pub gradient_norm: f64,
    pub shots: usize,
    pub preparations: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub epochs_completed: usize,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub total_shots: usize,
    pub total_preparations: usize,
    pub weight_names: Vec<String>,
    pub final_weights: Vec<f64>,
    pub wall_time_seconds: f64,
    pub config: ExperimentConfig,
}

struct Recorder {
    path: PathBuf,
    out: BufWriter<File>,
    emit_every: usize,
    epochs: usize,
    rows: Vec<MetricRow>,
    weights: Option<WeightVector>,
    io_error: Option<std::io::Error>,
}

impl Recorder {
    fn new(dir: &Path, emit_every: usize, epochs: usize) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(METRICS_FILE);
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Recorder { path, out: BufWriter::new(file), emit_every, epochs, rows: Vec::new(), weights: None, io_error: None })
    }

    /// Returns `false` to stop training after a write failure.
    fn record(&mut self, row: MetricRow, w: &WeightVector) -> bool {
        self.weights = Some(w.clone());
        let emit = row.epoch.is_multiple_of(self.emit_every) || row.epoch == self.epochs;
        if emit {
            let line = serde_json::to_string(&row).expect("metric rows serialize");
            if let Err(e) = writeln!(self.out, "{line}").and_then(|_| self.out.flush()) {
                self.io_error = Some(e);
                return false;
            }
        }
        self.rows.push(row);
        true
    }
}

fn train_classical<M: EnergyModel>(m: &M, exp: &Experiment, rec: &mut Recorder) -> Result<WeightVector, CliError> {
    let est = &exp.config.estimator;
    let nudge = classical_nudge(est.beta, est.mode)?;
    let w = energy::train(m, exp.weights.clone(), &exp.data, nudge, est.eta, exp.config.run.epochs, |mm, w| {
        let row = MetricRow {
            epoch: mm.epoch,
            mean_cost: mm.mean_cost,
            gradient_norm: mm.gradient_norm,
            shots: 0,
            preparations: 0,
            degenerate: mm.degenerate_equilibria,
        };
        rec.record(row, w)
    })?;
    Ok(w)
}

fn train_quantum<M: QuantumModel>(m: &M, exp: &Experiment, rec: &mut Recorder) -> Result<WeightVector, CliError> {
    let cfg = quantum_config(&exp.config, DegeneracyPolicy::Warn);
    let w = qep::qep_train(m, exp.weights.clone(), &exp.data, &cfg, exp.config.run.epochs, |mm, w| {
        let row = MetricRow {
            epoch: mm.epoch,
            mean_cost: mm.mean_cost,
            gradient_norm: mm.gradient_norm,
            shots: mm.shots,
            preparations: mm.preparations,
            degenerate: mm.degenerate_phases,
        };
        rec.record(row, w)
    })?;
    Ok(w)
}

/// Runs the training loop, streaming metric rows to `metrics.ndjson`, then
/// writes `summary.json`. A model error still writes the summary (status
/// `"error"`, last completed weights) before it is returned.
pub fn train(exp: &Experiment, out: &Path) -> Result<RunSummary, CliError> {
    require_task(exp, "train")?;
    let start = Instant::now();
    let mut rec = Recorder::new(out, exp.config.run.emit_every, exp.config.run.epochs)?;
    let result = match &exp.model {
        Model::Ising(m) => train_classical(m, exp, &mut rec),
        Model::Elastic(m) => train_classical(m, exp, &mut rec),
        Model::Tfim(m) => train_quantum(m, exp, &mut rec),
        Model::Qho(m) => train_quantum(m, exp, &mut rec),
    };
    let result = match rec.io_error.take() {
        Some(source) => Err(CliError::Io { path: rec.path.clone(), source }),
        None => result,
    };
    let weights = match &result {
        Ok(w) => w.clone(),
        Err(_) => rec.weights.clone().unwrap_or_else(|| exp.weights.clone()),
    };
    let summary = RunSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: exp.config.run.seed,
        status: if result.is_ok() { "ok" } else { "error" }.to_string(),
        error: result.as_ref().err().map(|e| e.to_string()),
        epochs_completed: rec.rows.last().map_or(0, |r| r.epoch),
        initial_cost: rec.rows.first().map(|r| r.mean_cost),
        final_cost: rec.rows.last().map(|r| r.mean_cost),
        total_shots: rec.rows.iter().map(|r| r.shots).sum(),
        total_preparations: rec.rows.iter().map(|r| r.preparations).sum(),
        weight_names: weights.names.clone(),
        final_weights: weights.values.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: exp.config.clone(),
    };
    write_json(out, SUMMARY_FILE, &summary)?;
    result.map(|_| summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub name: String,
    pub estimate: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

/// Error norms of the exact estimator at `beta` and `beta / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub mode: String,
    pub beta: f64,
    pub error: f64,
    pub half_beta_error: f64,
    /// `error / half_beta_error`: about 2 for one-sided, 4 for symmetric.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGradientCheck {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub model: String,
    pub estimator: String,
    pub mode: String,
    pub beta: f64,
    pub fd_step: f64,
    pub tolerance: f64,
    pub rows: Vec<GradRow>,
    pub max_rel_error: f64,
    pub ratios: Vec<RatioRow>,
    /// Classical models: analytic `dE/dw` against a finite difference at
    /// the free equilibrium.
    pub energy_gradient: Option<EnergyGradientCheck>,
    pub passed: bool,
}

fn error_norm(a: &GradientEstimate, b: &GradientEstimate) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn ratio_row(mode: NudgeModeConfig, beta: f64, error: f64, half_beta_error: f64) -> RatioRow {
    RatioRow {
        mode: match mode {
            NudgeModeConfig::OneSided => "one_sided",
            NudgeModeConfig::Symmetric => "symmetric",
        }
        .to_string(),
        beta,
        error,
        half_beta_error,
        ratio: (half_beta_error > 0.0).then(|| error / half_beta_error),
    }
}

struct Checked {
    estimate: GradientEstimate,
    oracle: GradientEstimate,
    ratios: Vec<RatioRow>,
    energy_gradient: Option<EnergyGradientCheck>,
}

const MODES: [NudgeModeConfig; 2] = [NudgeModeConfig::OneSided, NudgeModeConfig::Symmetric];

fn check_classical<M: EnergyModel>(m: &M, exp: &Experiment, x: &[f64], y: &[f64]) -> Result<Checked, CliError> {
    let est = &exp.config.estimator;
    let w = &exp.weights;
    let estimate = energy::ep_gradient(m, w, x, y, classical_nudge(est.beta, est.mode)?)?;
    let oracle = energy::exact_cost_gradient_oracle(m, w, x, y, est.fd_step)?;
    let mut ratios = Vec::new();
    for mode in MODES {
        let e1 = energy::ep_gradient(m, w, x, y, classical_nudge(est.beta, mode)?)?;
        let e2 = energy::ep_gradient(m, w, x, y, classical_nudge(est.beta / 2.0, mode)?)?;
        ratios.push(ratio_row(mode, est.beta, error_norm(&e1, &oracle), error_norm(&e2, &oracle)));
    }

    let s = m.equilibrate(&w.values, x, y, 0.0, None)?.state;
    let analytic = m.energy_weight_gradient(&w.values, x, &s)?;
    let h = est.fd_step;
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for (i, a) in analytic.iter().enumerate() {
        let at = |d: f64| {
            let mut wp = w.values.clone();
            wp[i] += d;
            m.energy(&wp, x, &s)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        max_abs = max_abs.max((a - fd).abs());
        max_rel = max_rel.max(energy::relative_error(*a, fd, RELATIVE_ERROR_FLOOR));
    }
    Ok(Checked {
        estimate,
        oracle,
        ratios,
        energy_gradient: Some(EnergyGradientCheck {
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            tolerance: ENERGY_GRADIENT_TOLERANCE,
        }),
    })
}

fn check_quantum<M: QuantumModel>(m: &M, exp: &Experiment, x: &[f64], y: &[f64]) -> Result<Checked, CliError> {
    let cfg = quantum_config(&exp.config, DegeneracyPolicy::Error);
    let w = &exp.weights;
    let key = StreamKey::new(cfg.seed).child(GRADCHECK_STREAM);
    let estimate = qep::qep_gradient(m, w, x, y, &cfg, key)?.estimate;
    let oracle = qep::qep_cost_oracle(m, w, x, y, exp.config.estimator.fd_step, cfg.level)?;
    let mut ratios = Vec::new();
    for mode in MODES {
        let at = |beta: f64| -> Result<f64, CliError> {
            let c = QepConfig {
                beta,
                estimator: Estimator::ExactExpectation,
                nudge: match mode {
                    NudgeModeConfig::OneSided => QepNudge::OneSided,
                    NudgeModeConfig::Symmetric => QepNudge::Symmetric,
                },
                ..cfg.clone()
            };
            Ok(error_norm(&qep::qep_gradient(m, w, x, y, &c, key)?.estimate, &oracle))
        };
        ratios.push(ratio_row(mode, cfg.beta, at(cfg.beta)?, at(cfg.beta / 2.0)?));
    }
    Ok(Checked { estimate, oracle, ratios, energy_gradient: None })
}

/// Compares the configured estimator with a finite-difference oracle of the
/// cost on the first example. Writes `gradcheck.json`; the returned report
/// has `passed == false` if any relative error exceeds its tolerance.
pub fn gradcheck(exp: &Experiment, out: &Path) -> Result<GradcheckReport, CliError> {
    require_task(exp, "gradcheck")?;
    let (x, y) = exp.probe();
    let checked = match &exp.model {
        Model::Ising(m) => check_classical(m, exp, &x, &y)?,
        Model::Elastic(m) => check_classical(m, exp, &x, &y)?,
        Model::Tfim(m) => check_quantum(m, exp, &x, &y)?,
        Model::Qho(m) => check_quantum(m, exp, &x, &y)?,
    };
    let est = &exp.config.estimator;
    let rows: Vec<GradRow> = exp
        .weights
        .names
        .iter()
        .zip(checked.estimate.values.iter().zip(&checked.oracle.values))
        .map(|(name, (&e, &o))| GradRow {
            name: name.clone(),
            estimate: e,
            oracle: o,
            abs_error: (e - o).abs(),
            rel_error: energy::relative_error(e, o, RELATIVE_ERROR_FLOOR),
        })
        .collect();
    let max_rel_error = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    let energy_ok = checked.energy_gradient.as_ref().is_none_or(|c| c.max_rel_error <= c.tolerance);
    let report = GradcheckReport {
        model: exp.config.model.kind().to_string(),
        estimator: if exp.config.model.is_quantum() {
            serde_json::to_value(est.estimator).expect("enum serializes").as_str().unwrap_or_default().to_string()
        } else {
            "equilibrium".to_string()
        },
        mode: ratio_row(est.mode, 0.0, 0.0, 0.0).mode,
        beta: est.beta,
        fd_step: est.fd_step,
        tolerance: est.tolerance,
        max_rel_error,
        rows,
        ratios: checked.ratios,
        energy_gradient: checked.energy_gradient,
        passed: max_rel_error <= est.tolerance && energy_ok,
    };
    write_json(out, GRADCHECK_FILE, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub index: usize,
    pub energy: f64,
    /// Distance to the next level; absent for the highest level computed.
    pub gap_to_next: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub model: String,
    pub input: Vec<f64>,
    pub levels: Vec<Level>,
    pub ground_degenerate: bool,
}

fn levels_from(values: &[f64], count: usize) -> Vec<Level> {
    (0..count.min(values.len()))
        .map(|k| {
            let gap = values.get(k + 1).map(|v| v - values[k]);
            let below = k > 0 && values[k] - values[k - 1] < DEGENERACY_GAP;
            Level {
                index: k,
                energy: values[k],
                gap_to_next: gap,
                degenerate: below || gap.is_some_and(|g| g < DEGENERACY_GAP),
            }
        })
        .collect()
}

/// Free-energy levels of every configuration of the non-input spins.
fn ising_levels(m: &qep_core::classical::IsingModel, w: &[f64], x: &[f64]) -> Result<Vec<f64>, CliError> {
    let free: Vec<usize> = (0..m.n()).filter(|i| !m.input_spins().contains(i)).collect();
    if free.len() > qep_core::classical::ising::EXHAUSTIVE_LIMIT {
        return Err(qep_core::Error::Capacity(format!("{} free spins exceed the enumeration limit", free.len())).into());
    }
    let mut s = vec![1.0; m.n()];
    for (&i, &v) in m.input_spins().iter().zip(x) {
        s[i] = v;
    }
    let mut values = Vec::with_capacity(1 << free.len());
    for mask in 0..1usize << free.len() {
        for (b, &i) in free.iter().enumerate() {
            s[i] = if (mask >> b) & 1 == 1 { -1.0 } else { 1.0 };
        }
        values.push(m.energy(w, x, &s)?);
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Lowest `count` levels of the free Hamiltonian (or energy) at the first
/// example's input.
pub fn spectrum(exp: &Experiment, count: usize, out: &Path) -> Result<SpectrumReport, CliError> {
    if count == 0 {
        return Err(CliError::Config(vec![FieldError::new("--count", "must be at least 1")]));
    }
    let (x, _) = exp.probe();
    let w = &exp.weights.values;
    let values = match &exp.model {
        Model::Tfim(m) => hilbert::spectrum(&m.build_hamiltonian(w, &x)?)?.values,
        Model::Qho(m) => {
            let y = vec![0.0; m.readouts().len()];
            m.solve_ground_state(w, &x, &y, 0.0)?.lowest_levels(count + 1)
        }
        Model::Ising(m) => ising_levels(m, w, &x)?,
        Model::Elastic(_) => {
            return Err(CliError::Config(vec![FieldError::new("model.kind", "elastic networks have no discrete spectrum")]))
        }
    };
    let levels = levels_from(&values, count);
    let report = SpectrumReport {
        model: exp.config.model.kind().to_string(),
        input: x,
        ground_degenerate: levels.first().is_some_and(|l| l.degenerate),
        levels,
    };
    write_json(out, SPECTRUM_FILE, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub outcome: Vec<f64>,
    pub count: usize,
    pub frequency: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub observables: Vec<String>,
    pub level: usize,
    pub shots: usize,
    pub bins: Vec<Bin>,
    pub total_variation: f64,
}

fn parse_observables(n: usize, spec: &qep_core::tfim::TfimSpec, y: &[f64], ids: &str) -> Result<Vec<HermitianOperator>, CliError> {
    ids.split(',')
        .map(str::trim)
        .map(|id| {
            if id == "C" {
                spec.cost_observable(y).map_err(CliError::from)
            } else {
                pauli::parse(n, id).map_err(|e| CliError::Config(vec![FieldError::new("--observable", e.to_string())]))
            }
        })
        .collect()
}

/// Measures a commuting family (comma-separated Pauli strings, or `C` for
/// the cost) on `shots` fresh copies of eigenstate `estimator.level` of the
/// free Hamiltonian at the first example's input.
pub fn sample(exp: &Experiment, observables: &str, shots: usize, out: &Path) -> Result<Histogram, CliError> {
    let Model::Tfim(m) = &exp.model else {
        return Err(CliError::Config(vec![FieldError::new("model.kind", "sampling needs a tfim model")]));
    };
    if shots == 0 {
        return Err(CliError::Config(vec![FieldError::new("--shots", "must be at least 1")]));
    }
    let (x, y) = exp.probe();
    let ops = parse_observables(m.n(), m, &y, observables)?;
    let refs: Vec<&HermitianOperator> = ops.iter().collect();
    let dec = JointDecomposition::new(&refs).map_err(|e| match e {
        qep_core::Error::NonCommuting { .. } => CliError::Config(vec![FieldError::new("--observable", e.to_string())]),
        other => other.into(),
    })?;
    let level = exp.config.estimator.level;
    let state = m.prepare(&exp.weights.values, &x, &y, 0.0, level)?.state;
    let sampler = FamilySampler::new(dec, &state)?;

    let key = StreamKey::new(exp.config.run.seed).child(SAMPLE_STREAM);
    let groups = sampler.probabilities().len();
    let mut counts = vec![0usize; groups];
    for c in 0..shots.div_ceil(SHOT_CHUNK) {
        let mut rng = key.child(c as u64).rng();
        for _ in 0..SHOT_CHUNK.min(shots - c * SHOT_CHUNK) {
            counts[sampler.draw(&mut rng).0] += 1;
        }
    }
    let dec = sampler.decomposition();
    let probs = sampler.probabilities();
    let bins: Vec<Bin> = (0..groups)
        .filter(|&g| counts[g] > 0 || probs[g] > MIN_BRANCH_PROBABILITY)
        .map(|g| Bin {
            outcome: dec.outcomes(g).to_vec(),
            count: counts[g],
            frequency: counts[g] as f64 / shots as f64,
            probability: probs[g],
        })
        .collect();
    let total_variation = 0.5 * bins.iter().map(|b| (b.frequency - b.probability).abs()).sum::<f64>();
    let hist = Histogram { observables: dec.labels().to_vec(), level, shots, bins, total_variation };
    write_json(out, HISTOGRAM_FILE, &hist)?;
    Ok(hist)
}
