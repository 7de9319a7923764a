//! Energy-based models and the equilibrium-propagation estimators.
//!
//! A model exposes an energy `E(w, x, s)`, a cost `C(s, y)` and a way to
//! find a stationary state of the total energy `E + beta * C`. From two or
//! three such equilibria the estimators below approximate the gradient of
//! `w -> C(s*(w, x), y)`. Every estimate follows the descent convention: the
//! update is `w <- w - eta * estimate`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};
use crate::par::{self, Execution};

/// An equilibrium of the total energy at some nudge strength.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: Vec<f64>,
    /// Continuous models: `||dE^beta/ds||_inf` over free coordinates.
    /// Discrete models: the largest energy decrease available from a single
    /// flip (zero when flip-stable).
    pub residual: f64,
    pub iterations: usize,
    /// Another state attains the same total energy within tolerance.
    pub degenerate: bool,
    /// The state sits on a singular point of the energy (for example two
    /// coincident spring endpoints).
    pub flagged: bool,
}

pub trait EnergyModel: Sync {
    fn weight_count(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn target_dim(&self) -> usize;

    fn weight_names(&self) -> Vec<String>;

    /// Per-weight `[lo, hi]` limits, if the model has physical constraints.
    fn weight_bounds(&self) -> Option<Vec<(f64, f64)>> {
        None
    }

    fn energy(&self, w: &[f64], x: &[f64], s: &[f64]) -> Result<f64>;
    fn energy_weight_gradient(&self, w: &[f64], x: &[f64], s: &[f64]) -> Result<Vec<f64>>;
    fn cost(&self, s: &[f64], y: &[f64]) -> Result<f64>;
    fn cost_state_gradient(&self, s: &[f64], y: &[f64]) -> Result<Vec<f64>>;

    /// Finds a stationary state of `E + beta * C`, starting from
    /// `warm_start` when given.
    fn equilibrate(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64, warm_start: Option<&[f64]>)
        -> Result<Equilibrium>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, names: Vec<String>, bounds: Option<Vec<(f64, f64)>>) -> Result<Self> {
        shape_check("weight names", values.len(), names.len())?;
        if let Some(b) = &bounds {
            shape_check("weight bounds", values.len(), b.len())?;
            for ((v, (lo, hi)), name) in values.iter().zip(b).zip(&names) {
                if lo > hi {
                    return Err(Error::InvalidArgument(format!("empty bounds [{lo}, {hi}] for `{name}`")));
                }
                if v < lo || v > hi {
                    return Err(Error::Domain(format!("weight `{name}` = {v} outside [{lo}, {hi}]")));
                }
            }
        }
        if let Some((v, name)) = values.iter().zip(&names).find(|(v, _)| !v.is_finite()) {
            return Err(Error::Domain(format!("weight `{name}` is not finite ({v})")));
        }
        Ok(WeightVector { values, names, bounds })
    }

    /// Builds a weight vector with the model's names and bounds.
    pub fn for_model<M: EnergyModel + ?Sized>(model: &M, values: Vec<f64>) -> Result<Self> {
        shape_check("weights", model.weight_count(), values.len())?;
        Self::new(values, model.weight_names(), model.weight_bounds())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clamp_in_place(&mut self) {
        if let Some(b) = &self.bounds {
            for (v, &(lo, hi)) in self.values.iter_mut().zip(b) {
                *v = v.clamp(lo, hi);
            }
        }
    }

    /// `w - eta * g`, clamped to bounds.
    pub fn descend(&self, gradient: &[f64], eta: f64) -> Result<Self> {
        shape_check("gradient", self.len(), gradient.len())?;
        let mut out = self.clone();
        for (v, g) in out.values.iter_mut().zip(gradient) {
            *v -= eta * g;
        }
        out.clamp_in_place();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NudgeMode {
    OneSidedPositive,
    OneSidedNegative,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NudgeConfig {
    pub beta: f64,
    pub mode: NudgeMode,
}

impl NudgeConfig {
    pub fn new(beta: f64, mode: NudgeMode) -> Result<Self> {
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("nudge strength must be finite and nonzero, got {beta}")));
        }
        Ok(NudgeConfig { beta, mode })
    }

    pub fn symmetric(beta: f64) -> Result<Self> {
        Self::new(beta, NudgeMode::Symmetric)
    }

    pub fn one_sided(beta: f64) -> Result<Self> {
        Self::new(beta, NudgeMode::OneSidedPositive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    OneSided,
    Symmetric,
    ExactOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
    pub kind: EstimatorKind,
    /// Signed nudge strength, or the finite-difference step for the oracle.
    pub beta_used: f64,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `E(w, x, s) + beta * C(s, y)`.
pub fn total_energy<M: EnergyModel + ?Sized>(model: &M, w: &[f64], x: &[f64], s: &[f64], y: &[f64], beta: f64) -> Result<f64> {
    shape_check("state", model.state_dim(), s.len())?;
    let e = model.energy(w, x, s)?;
    if beta == 0.0 {
        return Ok(e);
    }
    Ok(e + beta * model.cost(s, y)?)
}

fn check_inputs<M: EnergyModel + ?Sized>(model: &M, w: &[f64], x: &[f64], y: &[f64]) -> Result<()> {
    shape_check("weights", model.weight_count(), w.len())?;
    shape_check("input", model.input_dim(), x.len())?;
    shape_check("target", model.target_dim(), y.len())
}

/// The equilibria behind one EP estimate.
#[derive(Debug, Clone)]
pub struct EpPhases {
    pub free: Equilibrium,
    pub positive: Option<Equilibrium>,
    pub negative: Option<Equilibrium>,
    pub estimate: GradientEstimate,
}

/// EP gradient estimate together with the equilibria it was computed from.
/// Nudged phases start from the free equilibrium and run concurrently when
/// both are needed.
pub fn ep_phases<M: EnergyModel + ?Sized>(model: &M, w: &[f64], x: &[f64], y: &[f64], nudge: NudgeConfig) -> Result<EpPhases> {
    check_inputs(model, w, x, y)?;
    NudgeConfig::new(nudge.beta, nudge.mode)?;
    let beta = nudge.beta;
    let free = model.equilibrate(w, x, y, 0.0, None)?;
    let g0 = model.energy_weight_gradient(w, x, &free.state)?;
    let nudged = |b: f64| model.equilibrate(w, x, y, b, Some(&free.state));

    let (positive, negative, estimate) = match nudge.mode {
        NudgeMode::OneSidedPositive | NudgeMode::OneSidedNegative => {
            let b = if nudge.mode == NudgeMode::OneSidedPositive { beta } else { -beta };
            let s = nudged(b)?;
            let g = model.energy_weight_gradient(w, x, &s.state)?;
            let values = g.iter().zip(&g0).map(|(a, b0)| (a - b0) / b).collect();
            let est = GradientEstimate { values, kind: EstimatorKind::OneSided, beta_used: b };
            if b > 0.0 {
                (Some(s), None, est)
            } else {
                (None, Some(s), est)
            }
        }
        NudgeMode::Symmetric => {
            let (p, n) = par::join(Execution::default(), || nudged(beta), || nudged(-beta));
            let (p, n) = (p?, n?);
            let gp = model.energy_weight_gradient(w, x, &p.state)?;
            let gn = model.energy_weight_gradient(w, x, &n.state)?;
            let values = gp.iter().zip(&gn).map(|(a, b)| (a - b) / (2.0 * beta)).collect();
            (Some(p), Some(n), GradientEstimate { values, kind: EstimatorKind::Symmetric, beta_used: beta })
        }
    };
    Ok(EpPhases { free, positive, negative, estimate })
}

pub fn ep_gradient<M: EnergyModel + ?Sized>(model: &M, w: &WeightVector, x: &[f64], y: &[f64], nudge: NudgeConfig) -> Result<GradientEstimate> {
    Ok(ep_phases(model, &w.values, x, y, nudge)?.estimate)
}

/// `(E^beta(s^beta) - E^0(s^0)) / beta`, evaluated as
/// `(E(s^beta) - E(s^0)) / beta + C(s^beta)` so that an unchanged state
/// returns its cost exactly.
pub fn contrastive_loss<M: EnergyModel + ?Sized>(model: &M, w: &WeightVector, x: &[f64], y: &[f64], beta: f64) -> Result<f64> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument("contrastive loss needs a finite nonzero beta".into()));
    }
    check_inputs(model, &w.values, x, y)?;
    let w = &w.values;
    let free = model.equilibrate(w, x, y, 0.0, None)?;
    let nudged = model.equilibrate(w, x, y, beta, Some(&free.state))?;
    let e0 = model.energy(w, x, &free.state)?;
    let eb = model.energy(w, x, &nudged.state)?;
    Ok((eb - e0) / beta + model.cost(&nudged.state, y)?)
}

/// `C(s*(w, x), y)` at the free equilibrium.
pub fn free_cost<M: EnergyModel + ?Sized>(model: &M, w: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    check_inputs(model, w, x, y)?;
    let free = model.equilibrate(w, x, y, 0.0, None)?;
    model.cost(&free.state, y)
}

/// Central finite difference of `w -> C(s*(w, x), y)`, re-equilibrating at
/// every perturbed weight (warm-started from the unperturbed equilibrium).
/// Weights are perturbed independently and in parallel.
pub fn exact_cost_gradient_oracle<M: EnergyModel + ?Sized>(
    model: &M,
    w: &WeightVector,
    x: &[f64],
    y: &[f64],
    fd_step: f64,
) -> Result<GradientEstimate> {
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {fd_step}")));
    }
    check_inputs(model, &w.values, x, y)?;
    let base = model.equilibrate(&w.values, x, y, 0.0, None)?;
    let cost_at = |i: usize, delta: f64| -> Result<f64> {
        let mut wp = w.values.clone();
        wp[i] += delta;
        let s = model.equilibrate(&wp, x, y, 0.0, Some(&base.state))?;
        model.cost(&s.state, y)
    };
    let values = par::try_map_range(Execution::default(), w.len(), |i| {
        Ok::<f64, Error>((cost_at(i, fd_step)? - cost_at(i, -fd_step)?) / (2.0 * fd_step))
    })?;
    Ok(GradientEstimate { values, kind: EstimatorKind::ExactOracle, beta_used: fd_step })
}

/// One EP update: `w - eta * estimate`, clamped to the weight bounds.
pub fn train_step<M: EnergyModel + ?Sized>(
    model: &M,
    w: &WeightVector,
    x: &[f64],
    y: &[f64],
    nudge: NudgeConfig,
    eta: f64,
) -> Result<WeightVector> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
    }
    let g = ep_gradient(model, w, x, y, nudge)?;
    w.descend(&g.values, eta)
}

/// A labelled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean free-state cost over the dataset after the epoch's updates.
    pub mean_cost: f64,
    /// Mean estimate norm over the epoch's updates (zero at epoch 0).
    pub gradient_norm: f64,
    pub degenerate_equilibria: usize,
}

/// Mean free-state cost over a dataset; examples are evaluated in parallel.
pub fn mean_cost<M: EnergyModel + ?Sized>(model: &M, w: &[f64], data: &[Example]) -> Result<(f64, usize)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let per = par::try_map_range(Execution::default(), data.len(), |i| {
        let ex = &data[i];
        let free = model.equilibrate(w, &ex.x, &ex.y, 0.0, None)?;
        Ok::<_, Error>((model.cost(&free.state, &ex.y)?, free.degenerate))
    })?;
    let degenerate = per.iter().filter(|(_, d)| *d).count();
    Ok((per.iter().map(|(c, _)| c).sum::<f64>() / data.len() as f64, degenerate))
}

/// Per-example EP training. `on_epoch` receives metrics for epoch 0 (the
/// initial weights) and after every epoch; returning `false` stops early.
pub fn train<M: EnergyModel + ?Sized>(
    model: &M,
    mut w: WeightVector,
    data: &[Example],
    nudge: NudgeConfig,
    eta: f64,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochMetrics, &WeightVector) -> bool,
) -> Result<WeightVector> {
    let (c0, d0) = mean_cost(model, &w.values, data)?;
    let m0 = EpochMetrics { epoch: 0, mean_cost: c0, gradient_norm: 0.0, degenerate_equilibria: d0 };
    if !on_epoch(&m0, &w) {
        return Ok(w);
    }
    for epoch in 1..=epochs {
        let mut norm_sum = 0.0;
        for ex in data {
            let g = ep_gradient(model, &w, &ex.x, &ex.y, nudge)?;
            norm_sum += g.norm();
            w = w.descend(&g.values, eta)?;
        }
        let (c, d) = mean_cost(model, &w.values, data)?;
        let m = EpochMetrics {
            epoch,
            mean_cost: c,
            gradient_norm: norm_sum / data.len() as f64,
            degenerate_equilibria: d,
        };
        if !on_epoch(&m, &w) {
            break;
        }
    }
    Ok(w)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Floor used by gradient checks when both values are near zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;
