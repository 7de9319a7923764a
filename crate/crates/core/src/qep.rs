//! Equilibrium propagation on quantum eigenstates.
//!
//! The "equilibrium" is an eigenstate (by default the ground state) of the
//! nudged Hamiltonian `H(w, x) + beta C(y)`. The gradient estimate for
//! weight `w_k` contrasts the eigenstate expectation of `dH/dw_k` between a
//! nudged and a reference phase. It is either computed exactly or estimated
//! from simulated projective measurements, one fresh state preparation per
//! shot and per commuting family.

use serde::{Deserialize, Serialize};

use crate::energy::{EstimatorKind, Example, GradientEstimate, WeightVector};
use crate::error::{shape_check, Error, Result};
use crate::hilbert::{self, FamilySampler, JointDecomposition, StateVector};
use crate::par::{self, Execution};
use crate::qho::{GaussianGroundState, QhoSpec};
use crate::rng::StreamKey;
use crate::tfim::TfimSpec;

/// Shots drawn from one random stream before moving to the next. Fixed so
/// that results do not depend on how chunks are scheduled.
pub const SHOT_CHUNK: usize = 1024;
/// Number of equal beta increments used to follow an eigenstate.
pub const RAMP_SUBSTEPS: usize = 8;
/// Overlap between consecutive ramp points below which tracking is flagged
/// as lost.
pub const TRACK_OVERLAP: f64 = 0.9;

/// An eigenstate of the nudged Hamiltonian.
#[derive(Debug, Clone)]
pub struct Prepared<S> {
    pub state: S,
    pub energy: f64,
    pub level: usize,
    pub gap: f64,
    pub degenerate: bool,
}

/// Measurement outcomes of one phase.
#[derive(Debug, Clone, Default)]
pub struct PhaseShots {
    /// `outcomes[k][t]`: outcome of `dH/dw_k` in shot `t`.
    pub outcomes: Vec<Vec<f64>>,
    /// Cost observable outcome per shot.
    pub cost: Vec<f64>,
    /// State preparations consumed, per commuting family.
    pub preparations: Vec<(String, usize)>,
}

pub trait QuantumModel: Sync {
    type State: Clone + Send + Sync;

    fn weight_count(&self) -> usize;
    fn weight_names(&self) -> Vec<String>;
    fn weight_bounds(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
    fn input_dim(&self) -> usize;
    fn target_dim(&self) -> usize;

    /// Eigenstate number `level` (ascending energy) of `H(w, x) + beta C(y)`.
    fn prepare(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64, level: usize) -> Result<Prepared<Self::State>>;

    /// `<dH/dw_k>` for every weight.
    fn derivative_expectations(&self, state: &Self::State) -> Result<Vec<f64>>;

    fn cost_expectation(&self, state: &Self::State, y: &[f64]) -> Result<f64>;

    /// `shots` independent preparations of `state`, each followed by a
    /// measurement of every commuting family.
    fn sample(&self, state: &Self::State, y: &[f64], shots: usize, key: StreamKey) -> Result<PhaseShots>;

    /// All eigenstates, ascending. Needed only for eigenstate tracking.
    fn all_levels(&self, _w: &[f64], _x: &[f64], _y: &[f64], _beta: f64) -> Result<Vec<Prepared<Self::State>>> {
        Err(Error::InvalidArgument("this model does not support eigenstate tracking".into()))
    }

    fn overlap(&self, _a: &Self::State, _b: &Self::State) -> Result<f64> {
        Err(Error::InvalidArgument("this model does not support eigenstate tracking".into()))
    }
}

/// Runs `f(chunk, len)` over fixed-size shot chunks and concatenates the
/// per-chunk results in order.
fn chunked<T: Send>(shots: usize, f: impl Fn(usize, usize) -> Result<Vec<T>> + Sync + Send) -> Result<Vec<T>> {
    let chunks = shots.div_ceil(SHOT_CHUNK);
    let parts = par::try_map_range(Execution::default(), chunks, |c| {
        f(c, SHOT_CHUNK.min(shots - c * SHOT_CHUNK))
    })?;
    Ok(parts.into_iter().flatten().collect())
}

fn transpose(rows: Vec<Vec<f64>>, width: usize) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(rows.len()); width];
    for row in rows {
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    cols
}

impl QuantumModel for TfimSpec {
    type State = StateVector;

    fn weight_count(&self) -> usize {
        TfimSpec::weight_count(self)
    }
    fn weight_names(&self) -> Vec<String> {
        TfimSpec::weight_names(self)
    }
    fn input_dim(&self) -> usize {
        self.input_spins().len()
    }
    fn target_dim(&self) -> usize {
        self.output_spins().len()
    }

    fn prepare(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64, level: usize) -> Result<Prepared<StateVector>> {
        let h = self.nudged_hamiltonian(w, x, y, beta)?;
        let sol = if level == 0 { hilbert::ground_state(&h)? } else { hilbert::eigenstate_k(&h, level)? };
        Ok(Prepared {
            state: sol.eigenvector,
            energy: sol.eigenvalue,
            level,
            gap: sol.gap_to_next,
            degenerate: sol.degenerate,
        })
    }

    fn derivative_expectations(&self, state: &StateVector) -> Result<Vec<f64>> {
        TfimSpec::derivative_expectations(self, state)
    }

    fn cost_expectation(&self, state: &StateVector, y: &[f64]) -> Result<f64> {
        TfimSpec::cost_expectation(self, state, y)
    }

    fn sample(&self, state: &StateVector, y: &[f64], shots: usize, key: StreamKey) -> Result<PhaseShots> {
        let obs = self.derivative_observables()?;
        let cost = self.cost_observable(y)?;
        let fam = self.commuting_families();

        // Couplings and cost share one collapse; fields need another.
        let mut zz_ops: Vec<_> = fam.zz.iter().map(|&i| &obs[i]).collect();
        zz_ops.push(&cost);
        let zz = FamilySampler::new(JointDecomposition::new(&zz_ops)?, state)?;
        let xs = if fam.x.is_empty() {
            None
        } else {
            let ops: Vec<_> = fam.x.iter().map(|&i| &obs[i]).collect();
            Some(FamilySampler::new(JointDecomposition::new(&ops)?, state)?)
        };

        let m = self.weight_count();
        let rows = chunked(shots, |c, len| {
            let mut rz = key.child(0).child(c as u64).rng();
            let mut rx = key.child(1).child(c as u64).rng();
            Ok((0..len)
                .map(|_| {
                    let mut row = vec![0.0; m + 1];
                    let oz = zz.sample(&mut rz);
                    for (slot, &i) in fam.zz.iter().enumerate() {
                        row[i] = oz[slot];
                    }
                    row[m] = oz[fam.zz.len()];
                    if let Some(xs) = &xs {
                        let ox = xs.sample(&mut rx);
                        for (slot, &i) in fam.x.iter().enumerate() {
                            row[i] = ox[slot];
                        }
                    }
                    row
                })
                .collect())
        })?;
        let mut cols = transpose(rows, m + 1);
        let cost = cols.pop().unwrap_or_default();
        let mut preparations = vec![("zz+cost".to_string(), shots)];
        if xs.is_some() {
            preparations.push(("x".to_string(), shots));
        }
        Ok(PhaseShots { outcomes: cols, cost, preparations })
    }

    fn all_levels(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64) -> Result<Vec<Prepared<StateVector>>> {
        let h = self.nudged_hamiltonian(w, x, y, beta)?;
        let s = hilbert::spectrum(&h)?;
        Ok((0..s.len())
            .map(|k| Prepared {
                state: s.vectors[k].clone(),
                energy: s.values[k],
                level: k,
                gap: s.gap_after(k),
                degenerate: s.is_degenerate(k),
            })
            .collect())
    }

    fn overlap(&self, a: &StateVector, b: &StateVector) -> Result<f64> {
        a.overlap(b)
    }
}

impl QuantumModel for QhoSpec {
    type State = GaussianGroundState;

    fn weight_count(&self) -> usize {
        QhoSpec::weight_count(self)
    }
    fn weight_names(&self) -> Vec<String> {
        QhoSpec::weight_names(self)
    }
    fn weight_bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(vec![(0.0, f64::INFINITY); self.weight_count()])
    }
    fn input_dim(&self) -> usize {
        self.input_particles().len()
    }
    fn target_dim(&self) -> usize {
        self.readouts().len()
    }

    fn prepare(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64, level: usize) -> Result<Prepared<GaussianGroundState>> {
        if level != 0 {
            return Err(Error::InvalidArgument(
                "oscillator networks support the ground state only (level 0)".into(),
            ));
        }
        let g = self.solve_ground_state(w, x, y, beta)?;
        Ok(Prepared {
            energy: g.ground_energy,
            gap: g.hbar * g.frequencies[0],
            level: 0,
            degenerate: false,
            state: g,
        })
    }

    fn derivative_expectations(&self, state: &GaussianGroundState) -> Result<Vec<f64>> {
        Ok(QhoSpec::derivative_expectations(self, state))
    }

    fn cost_expectation(&self, state: &GaussianGroundState, y: &[f64]) -> Result<f64> {
        QhoSpec::cost_expectation(self, state, y)
    }

    fn sample(&self, state: &GaussianGroundState, y: &[f64], shots: usize, key: StreamKey) -> Result<PhaseShots> {
        shape_check("target", self.readouts().len(), y.len())?;
        let l = state.sampling_factor()?;
        let m = self.weight_count();
        let rows = chunked(shots, |c, len| {
            let mut rng = key.child(c as u64).rng();
            Ok((0..len)
                .map(|_| {
                    // All positions commute: one preparation yields every
                    // outcome.
                    let r = state.sample_with(&l, &mut rng);
                    let mut row: Vec<f64> = self.springs().iter().map(|&(i, j)| 0.5 * (r[i] - r[j]).powi(2)).collect();
                    row.push(self.cost_of_positions(&r, y));
                    row
                })
                .collect())
        })?;
        let mut cols = transpose(rows, m + 1);
        let cost = cols.pop().unwrap_or_default();
        Ok(PhaseShots { outcomes: cols, cost, preparations: vec![("positions".to_string(), shots)] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Sampled,
    #[default]
    ExactExpectation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QepNudge {
    #[default]
    OneSided,
    Symmetric,
}

/// What to do when a target eigenstate is degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DegeneracyPolicy {
    #[default]
    Error,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QepConfig {
    pub beta: f64,
    pub shots: usize,
    pub estimator: Estimator,
    pub nudge: QepNudge,
    pub level: usize,
    pub eta: f64,
    pub seed: u64,
    pub degeneracy: DegeneracyPolicy,
}

impl Default for QepConfig {
    fn default() -> Self {
        QepConfig {
            beta: 0.1,
            shots: 1000,
            estimator: Estimator::ExactExpectation,
            nudge: QepNudge::OneSided,
            level: 0,
            eta: 0.01,
            seed: 0,
            degeneracy: DegeneracyPolicy::Error,
        }
    }
}

impl QepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta == 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be finite and nonzero, got {}", self.beta)));
        }
        if self.shots == 0 {
            return Err(Error::InvalidArgument("shot count must be at least 1".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.level > 0 && self.estimator == Estimator::Sampled && self.shots == 0 {
            return Err(Error::InvalidArgument("sampled excited-state estimates need shots".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhaseRecord {
    pub beta: f64,
    pub shots: PhaseShots,
}

/// Raw outcomes behind a sampled estimate.
#[derive(Debug, Clone)]
pub struct ShotLedger {
    pub weight_names: Vec<String>,
    pub shots: usize,
    pub phases: Vec<PhaseRecord>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ShotLedger {
    /// Recomputes the estimate for one weight from that weight's outcomes
    /// only.
    pub fn estimate_for(&self, weight: usize) -> f64 {
        let (a, b) = (&self.phases[0], &self.phases[1]);
        (mean(&b.shots.outcomes[weight]) - mean(&a.shots.outcomes[weight])) / (b.beta - a.beta)
    }

    /// Preparations consumed per family, summed over phases.
    pub fn preparations(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in &self.phases {
            for (name, n) in &p.shots.preparations {
                match out.iter_mut().find(|(k, _)| k == name) {
                    Some((_, total)) => *total += n,
                    None => out.push((name.clone(), *n)),
                }
            }
        }
        out
    }

    pub fn total_preparations(&self) -> usize {
        self.preparations().iter().map(|(_, n)| n).sum()
    }

    /// Sample standard deviation of each weight's outcomes, per phase.
    pub fn outcome_std(&self) -> Vec<Vec<f64>> {
        self.phases
            .iter()
            .map(|p| {
                p.shots
                    .outcomes
                    .iter()
                    .map(|o| {
                        let m = mean(o);
                        let n = o.len().max(2) as f64;
                        (o.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct QepGradient {
    pub estimate: GradientEstimate,
    pub ledger: Option<ShotLedger>,
    /// Exact cost expectation in the free phase.
    pub free_cost: f64,
    /// Phases whose target eigenstate was degenerate (policy `Warn`).
    pub degenerate_phases: usize,
    /// Smallest consecutive overlap along the eigenstate ramps, when
    /// tracking was used.
    pub min_overlap: Option<f64>,
    pub track_lost: bool,
}

fn check_io<M: QuantumModel + ?Sized>(model: &M, w: &[f64], x: &[f64], y: &[f64]) -> Result<()> {
    shape_check("weights", model.weight_count(), w.len())?;
    shape_check("input", model.input_dim(), x.len())?;
    shape_check("target", model.target_dim(), y.len())
}

fn screen<S>(p: &Prepared<S>, policy: DegeneracyPolicy, count: &mut usize) -> Result<()> {
    if p.degenerate {
        match policy {
            DegeneracyPolicy::Error => return Err(Error::Degenerate { level: p.level, gap: p.gap }),
            DegeneracyPolicy::Warn => *count += 1,
        }
    }
    Ok(())
}

/// Result of following an eigenstate along a beta ramp.
#[derive(Debug, Clone)]
pub struct Tracked<S> {
    pub prepared: Prepared<S>,
    pub min_overlap: f64,
}

/// Follows eigenstate `level` of the free Hamiltonian to `beta` in
/// [`RAMP_SUBSTEPS`] equal steps, at each step choosing the eigenvector of
/// maximal overlap with the previous one. Fails if that eigenvector is
/// degenerate or has changed its position in the spectrum (a level
/// crossing).
pub fn track_eigenstate<M: QuantumModel + ?Sized>(
    model: &M,
    w: &[f64],
    x: &[f64],
    y: &[f64],
    beta: f64,
    level: usize,
) -> Result<Tracked<M::State>> {
    let start = model.all_levels(w, x, y, 0.0)?;
    let mut current = start
        .get(level)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("eigenstate index {level} out of range")))?;
    if current.degenerate {
        return Err(Error::Tracking {
            from: 0.0,
            to: 0.0,
            reason: format!("level {level} is degenerate at the start of the ramp (gap {:.3e})", current.gap),
        });
    }
    let mut min_overlap: f64 = 1.0;
    for m in 1..=RAMP_SUBSTEPS {
        let from = beta * (m - 1) as f64 / RAMP_SUBSTEPS as f64;
        let to = beta * m as f64 / RAMP_SUBSTEPS as f64;
        let levels = model.all_levels(w, x, y, to)?;
        let overlaps = levels
            .iter()
            .map(|l| model.overlap(&current.state, &l.state))
            .collect::<Result<Vec<f64>>>()?;
        let best = (0..overlaps.len()).max_by(|&a, &b| overlaps[a].total_cmp(&overlaps[b])).expect("nonempty spectrum");
        if levels[best].degenerate {
            return Err(Error::Tracking {
                from,
                to,
                reason: format!("tracked eigenvalue {:.6} is degenerate (gap {:.3e})", levels[best].energy, levels[best].gap),
            });
        }
        if best != level {
            return Err(Error::Tracking {
                from,
                to,
                reason: format!("eigenvalue crossing: tracked state moved from level {level} to level {best}"),
            });
        }
        min_overlap = min_overlap.min(overlaps[best]);
        current = levels[best].clone();
    }
    Ok(Tracked { prepared: current, min_overlap })
}

fn gradient_impl<M: QuantumModel + ?Sized>(
    model: &M,
    w: &[f64],
    x: &[f64],
    y: &[f64],
    cfg: &QepConfig,
    key: StreamKey,
    tracked: bool,
) -> Result<QepGradient> {
    cfg.validate()?;
    check_io(model, w, x, y)?;
    let beta = cfg.beta;
    let mut degenerate = 0;

    let free = model.prepare(w, x, y, 0.0, cfg.level)?;
    screen(&free, cfg.degeneracy, &mut degenerate)?;
    let free_cost = model.cost_expectation(&free.state, y)?;

    let nudged = |b: f64| -> Result<(Prepared<M::State>, Option<f64>)> {
        if tracked {
            let t = track_eigenstate(model, w, x, y, b, cfg.level)?;
            Ok((t.prepared, Some(t.min_overlap)))
        } else {
            Ok((model.prepare(w, x, y, b, cfg.level)?, None))
        }
    };
    // Phases as (beta, prepared state); the estimate is the difference
    // quotient between the last and the first.
    let (phases, min_overlap): (Vec<(f64, Prepared<M::State>)>, Option<f64>) = match cfg.nudge {
        QepNudge::OneSided => {
            let (p, ov) = nudged(beta)?;
            (vec![(0.0, free), (beta, p)], ov)
        }
        QepNudge::Symmetric => {
            let (plus, minus) = par::join(Execution::default(), || nudged(beta), || nudged(-beta));
            let ((p, ovp), (n, ovn)) = (plus?, minus?);
            let ov = match (ovp, ovn) {
                (Some(a), Some(b)) => Some(a.min(b)),
                _ => None,
            };
            (vec![(-beta, n), (beta, p)], ov)
        }
    };
    for (b, p) in &phases {
        if *b != 0.0 {
            screen(p, cfg.degeneracy, &mut degenerate)?;
        }
    }
    let (b0, b1) = (phases[0].0, phases[1].0);
    let kind = match cfg.nudge {
        QepNudge::OneSided => EstimatorKind::OneSided,
        QepNudge::Symmetric => EstimatorKind::Symmetric,
    };

    let (values, ledger) = match cfg.estimator {
        Estimator::ExactExpectation => {
            let d0 = model.derivative_expectations(&phases[0].1.state)?;
            let d1 = model.derivative_expectations(&phases[1].1.state)?;
            (d1.iter().zip(&d0).map(|(a, b)| (a - b) / (b1 - b0)).collect(), None)
        }
        Estimator::Sampled => {
            let records = par::try_map_range(Execution::default(), 2, |i| {
                let shots = model.sample(&phases[i].1.state, y, cfg.shots, key.child(i as u64))?;
                Ok::<_, Error>(PhaseRecord { beta: phases[i].0, shots })
            })?;
            let ledger = ShotLedger { weight_names: model.weight_names(), shots: cfg.shots, phases: records };
            let values = (0..model.weight_count()).map(|k| ledger.estimate_for(k)).collect();
            (values, Some(ledger))
        }
    };

    let track_lost = min_overlap.is_some_and(|o| o < TRACK_OVERLAP);
    Ok(QepGradient {
        estimate: GradientEstimate { values, kind, beta_used: beta },
        ledger,
        free_cost,
        degenerate_phases: degenerate,
        min_overlap,
        track_lost,
    })
}

/// Gradient estimate for `w -> <C(y)>` in eigenstate `cfg.level`.
/// Random draws come from `key`.
pub fn qep_gradient<M: QuantumModel + ?Sized>(
    model: &M,
    w: &WeightVector,
    x: &[f64],
    y: &[f64],
    cfg: &QepConfig,
    key: StreamKey,
) -> Result<QepGradient> {
    gradient_impl(model, &w.values, x, y, cfg, key, cfg.level > 0)
}

/// Like [`qep_gradient`], but always follows the nudged eigenstates from
/// the free one by overlap continuation and reports the smallest overlap.
pub fn excited_state_qep<M: QuantumModel + ?Sized>(
    model: &M,
    w: &WeightVector,
    x: &[f64],
    y: &[f64],
    cfg: &QepConfig,
    key: StreamKey,
) -> Result<QepGradient> {
    gradient_impl(model, &w.values, x, y, cfg, key, true)
}

/// `(E^beta - E^0) / beta` between eigenvalues of the nudged and free
/// Hamiltonians.
pub fn qep_contrastive_loss<M: QuantumModel + ?Sized>(
    model: &M,
    w: &WeightVector,
    x: &[f64],
    y: &[f64],
    beta: f64,
    level: usize,
) -> Result<f64> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument("contrastive loss needs a finite nonzero beta".into()));
    }
    check_io(model, &w.values, x, y)?;
    let e0 = model.prepare(&w.values, x, y, 0.0, level)?.energy;
    let eb = if level == 0 {
        model.prepare(&w.values, x, y, beta, 0)?.energy
    } else {
        track_eigenstate(model, &w.values, x, y, beta, level)?.prepared.energy
    };
    Ok((eb - e0) / beta)
}

/// Exact cost `<C(y)>` in eigenstate `level` of the free Hamiltonian.
pub fn qep_cost<M: QuantumModel + ?Sized>(model: &M, w: &[f64], x: &[f64], y: &[f64], level: usize) -> Result<f64> {
    check_io(model, w, x, y)?;
    let p = model.prepare(w, x, y, 0.0, level)?;
    model.cost_expectation(&p.state, y)
}

/// Central finite difference of `w -> <C(y)>`, re-solving the eigenstate
/// at each perturbed weight.
pub fn qep_cost_oracle<M: QuantumModel + ?Sized>(
    model: &M,
    w: &WeightVector,
    x: &[f64],
    y: &[f64],
    fd_step: f64,
    level: usize,
) -> Result<GradientEstimate> {
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {fd_step}")));
    }
    check_io(model, &w.values, x, y)?;
    let values = par::try_map_range(Execution::default(), w.len(), |i| {
        let at = |d: f64| {
            let mut wp = w.values.clone();
            wp[i] += d;
            qep_cost(model, &wp, x, y, level)
        };
        Ok::<f64, Error>((at(fd_step)? - at(-fd_step)?) / (2.0 * fd_step))
    })?;
    Ok(GradientEstimate { values, kind: EstimatorKind::ExactOracle, beta_used: fd_step })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QepEpochMetrics {
    pub epoch: usize,
    /// Mean exact cost expectation over the dataset after the epoch.
    pub mean_cost: f64,
    /// Mean estimate norm over the epoch's updates.
    pub gradient_norm: f64,
    /// Measurement shots consumed during the epoch.
    pub shots: usize,
    /// State preparations consumed during the epoch.
    pub preparations: usize,
    pub degenerate_phases: usize,
}

/// Mean exact cost over a dataset, examples in parallel.
pub fn qep_mean_cost<M: QuantumModel + ?Sized>(model: &M, w: &[f64], data: &[Example], level: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let costs = par::try_map_range(Execution::default(), data.len(), |i| qep_cost(model, w, &data[i].x, &data[i].y, level))?;
    Ok(costs.iter().sum::<f64>() / data.len() as f64)
}

/// Per-example training with `w <- w - eta * estimate`. The random stream
/// for example `i` of epoch `e` is `seed / e / i`. `on_epoch` sees epoch 0
/// (initial weights) and every later epoch; returning `false` stops early.
pub fn qep_train<M: QuantumModel + ?Sized>(
    model: &M,
    mut w: WeightVector,
    data: &[Example],
    cfg: &QepConfig,
    epochs: usize,
    mut on_epoch: impl FnMut(&QepEpochMetrics, &WeightVector) -> bool,
) -> Result<WeightVector> {
    cfg.validate()?;
    let root = StreamKey::new(cfg.seed);
    let m0 = QepEpochMetrics {
        epoch: 0,
        mean_cost: qep_mean_cost(model, &w.values, data, cfg.level)?,
        gradient_norm: 0.0,
        shots: 0,
        preparations: 0,
        degenerate_phases: 0,
    };
    if !on_epoch(&m0, &w) {
        return Ok(w);
    }
    for epoch in 1..=epochs {
        let mut norm_sum = 0.0;
        let (mut shots, mut preps, mut degenerate) = (0, 0, 0);
        for (i, ex) in data.iter().enumerate() {
            let g = qep_gradient(model, &w, &ex.x, &ex.y, cfg, root.path(&[epoch as u64, i as u64]))?;
            norm_sum += g.estimate.norm();
            degenerate += g.degenerate_phases;
            if let Some(l) = &g.ledger {
                shots += l.shots * l.phases.len();
                preps += l.total_preparations();
            }
            w = w.descend(&g.estimate.values, cfg.eta)?;
        }
        let m = QepEpochMetrics {
            epoch,
            mean_cost: qep_mean_cost(model, &w.values, data, cfg.level)?,
            gradient_norm: norm_sum / data.len() as f64,
            shots,
            preparations: preps,
            degenerate_phases: degenerate,
        };
        if !on_epoch(&m, &w) {
            break;
        }
    }
    Ok(w)
}

/// Weight vector with the model's names and bounds.
pub fn weights_for<M: QuantumModel + ?Sized>(model: &M, values: Vec<f64>) -> Result<WeightVector> {
    shape_check("weights", model.weight_count(), values.len())?;
    WeightVector::new(values, model.weight_names(), model.weight_bounds())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qho::Readout;
    use rand::Rng;

    fn tfim4(seed: u64) -> (TfimSpec, WeightVector, Vec<f64>, Vec<f64>) {
        let spec = TfimSpec::complete(4, vec![0], vec![3]).unwrap();
        let mut rng = StreamKey::new(seed).rng();
        let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        v.extend((0..4).map(|_| rng.random_range(0.3..1.0)));
        let w = weights_for(&spec, v).unwrap();
        (spec, w, vec![0.4], vec![-1.0])
    }

    fn cfg(beta: f64, estimator: Estimator, nudge: QepNudge) -> QepConfig {
        QepConfig { beta, estimator, nudge, shots: 1000, ..QepConfig::default() }
    }

    #[test]
    fn exact_estimate_approaches_oracle() {
        let (spec, w, x, y) = tfim4(1);
        let oracle = qep_cost_oracle(&spec, &w, &x, &y, 1e-5, 0).unwrap();
        let err = |beta: f64| {
            let g = qep_gradient(&spec, &w, &x, &y, &cfg(beta, Estimator::ExactExpectation, QepNudge::OneSided), StreamKey::new(0)).unwrap();
            g.estimate.values.iter().zip(&oracle.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        assert!(err(1e-3) < 1e-2);
        assert!(err(1e-4) < err(1e-3));
    }

    #[test]
    fn identity_cost_gives_zero_gradient() {
        // With reference readout and y = +1 on a single spin, C is not the
        // identity; use an oscillator whose only readout ignores the weights.
        let spec = QhoSpec::new(vec![1.0, 1.0], vec![(0, 1)], vec![1.0, 1.0], vec![0.0, 0.0], vec![], vec![]).unwrap();
        let w = weights_for(&spec, vec![0.5]).unwrap();
        let g = qep_gradient(&spec, &w, &[], &[], &cfg(0.1, Estimator::ExactExpectation, QepNudge::Symmetric), StreamKey::new(0)).unwrap();
        assert_eq!(g.estimate.values, vec![0.0]);
        assert!((qep_contrastive_loss(&spec, &w, &[], &[], 0.3, 0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sampled_ledger_economy_and_locality() {
        let (spec, w, x, y) = tfim4(2);
        let c = QepConfig { shots: 500, ..cfg(0.2, Estimator::Sampled, QepNudge::OneSided) };
        let g = qep_gradient(&spec, &w, &x, &y, &c, StreamKey::new(3)).unwrap();
        let ledger = g.ledger.as_ref().unwrap();
        assert_eq!(ledger.phases.len(), 2);
        for p in &ledger.phases {
            assert_eq!(p.shots.preparations, vec![("zz+cost".to_string(), 500), ("x".to_string(), 500)]);
            assert!(p.shots.outcomes.iter().all(|o| o.len() == 500));
            assert!(p.shots.outcomes.iter().flatten().all(|&v| v == 1.0 || v == -1.0));
            assert!(p.shots.cost.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        for k in 0..w.len() {
            assert_eq!(ledger.estimate_for(k), g.estimate.values[k]);
        }
        // Same key, same outcomes.
        let again = qep_gradient(&spec, &w, &x, &y, &c, StreamKey::new(3)).unwrap();
        assert_eq!(again.estimate, g.estimate);
    }

    #[test]
    fn sampling_is_reproducible() {
        let (spec, w, x, y) = tfim4(5);
        let p = spec.prepare(&w.values, &x, &y, 0.0, 0).unwrap();
        let a = spec.sample(&p.state, &y, 3000, StreamKey::new(9)).unwrap();
        let b = spec.sample(&p.state, &y, 3000, StreamKey::new(9)).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.cost, b.cost);
    }

    #[test]
    fn qho_sampled_matches_exact() {
        let spec = QhoSpec::new(
            vec![1.0, 1.0, 1.0],
            vec![(0, 1), (1, 2)],
            vec![1.0, 0.0, 0.5],
            vec![0.0, 0.0, 1.0],
            vec![0],
            vec![Readout::Separation { i: 2, j: 0 }],
        )
        .unwrap();
        let w = weights_for(&spec, vec![0.8, 1.2]).unwrap();
        let exact = qep_gradient(&spec, &w, &[0.2], &[1.5], &cfg(0.2, Estimator::ExactExpectation, QepNudge::Symmetric), StreamKey::new(0)).unwrap();
        let c = QepConfig { shots: 20_000, ..cfg(0.2, Estimator::Sampled, QepNudge::Symmetric) };
        let sampled = qep_gradient(&spec, &w, &[0.2], &[1.5], &c, StreamKey::new(1)).unwrap();
        let ledger = sampled.ledger.unwrap();
        let stds = ledger.outcome_std();
        for k in 0..2 {
            let se = (stds[0][k].powi(2) + stds[1][k].powi(2)).sqrt() / (20_000f64).sqrt() / 0.4;
            assert!((sampled.estimate.values[k] - exact.estimate.values[k]).abs() < 4.0 * se);
        }
        assert_eq!(ledger.preparations(), vec![("positions".to_string(), 40_000)]);
    }

    #[test]
    fn degeneracy_policy() {
        let spec = TfimSpec::complete(2, vec![], vec![1]).unwrap();
        let w = weights_for(&spec, vec![1.0, 0.0, 0.0]).unwrap();
        let strict = cfg(0.1, Estimator::ExactExpectation, QepNudge::OneSided);
        let err = qep_gradient(&spec, &w, &[], &[1.0], &strict, StreamKey::new(0)).unwrap_err();
        assert!(matches!(err, Error::Degenerate { level: 0, .. }));
        let lenient = QepConfig { degeneracy: DegeneracyPolicy::Warn, ..strict };
        let g = qep_gradient(&spec, &w, &[], &[1.0], &lenient, StreamKey::new(0)).unwrap();
        assert!(g.degenerate_phases >= 1);
    }

    #[test]
    fn tracking_reduces_to_ground_state() {
        let (spec, w, x, y) = tfim4(7);
        let c = cfg(0.05, Estimator::ExactExpectation, QepNudge::Symmetric);
        let direct = qep_gradient(&spec, &w, &x, &y, &c, StreamKey::new(0)).unwrap();
        let tracked = excited_state_qep(&spec, &w, &x, &y, &c, StreamKey::new(0)).unwrap();
        for (a, b) in direct.estimate.values.iter().zip(&tracked.estimate.values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(tracked.min_overlap.unwrap() > 0.99);
        assert!(!tracked.track_lost);
    }

    #[test]
    fn crossing_is_reported() {
        // With equal fields the middle levels of two spins are -|J| and
        // +|J|. A reference readout with y = -1 shifts J by -beta / 2, so
        // ramping beta to 1 drives J from 0.2 through zero.
        let spec = TfimSpec::complete(2, vec![], vec![1]).unwrap().with_readout_reference(Some(0)).unwrap();
        let w = weights_for(&spec, vec![0.2, 0.5, 0.5]).unwrap();
        let c = QepConfig { level: 1, ..cfg(1.0, Estimator::ExactExpectation, QepNudge::OneSided) };
        let err = excited_state_qep(&spec, &w, &[], &[-1.0], &c, StreamKey::new(0)).unwrap_err();
        match err {
            Error::Tracking { from, to, .. } => assert!(from <= 0.4 && 0.4 <= to, "{from}..{to}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn excited_state_estimate_matches_oracle() {
        let spec = TfimSpec::complete(2, vec![], vec![1]).unwrap();
        let w = weights_for(&spec, vec![0.7, 0.9, 0.3]).unwrap();
        let y = [1.0];
        let oracle = qep_cost_oracle(&spec, &w, &[], &y, 1e-5, 1).unwrap();
        let err = |beta: f64| {
            let c = QepConfig { level: 1, ..cfg(beta, Estimator::ExactExpectation, QepNudge::OneSided) };
            let g = excited_state_qep(&spec, &w, &[], &y, &c, StreamKey::new(0)).unwrap();
            g.estimate.values.iter().zip(&oracle.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!(e1 < 5e-2, "{e1}");
        assert!((1.6..2.4).contains(&(e1 / e2)), "{}", e1 / e2);
    }

    #[test]
    fn qho_rejects_excited_levels_and_indefinite_nudge() {
        let spec = QhoSpec::new(vec![1.0], vec![], vec![1.0], vec![0.0], vec![], vec![Readout::Position { i: 0 }]).unwrap();
        assert!(spec.prepare(&[], &[], &[0.0], 0.0, 1).is_err());
        let err = spec.prepare(&[], &[], &[0.0], -2.0, 0).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn training_with_zero_gradient_is_constant() {
        let spec = QhoSpec::new(vec![1.0, 1.0], vec![(0, 1)], vec![1.0, 1.0], vec![0.0, 0.0], vec![], vec![]).unwrap();
        let w = weights_for(&spec, vec![0.5]).unwrap();
        let data = vec![Example { x: vec![], y: vec![] }];
        let mut costs = Vec::new();
        let out = qep_train(&spec, w.clone(), &data, &QepConfig::default(), 5, |m, _| {
            costs.push(m.mean_cost);
            true
        })
        .unwrap();
        assert_eq!(out, w);
        assert_eq!(costs.len(), 6);
    }
}
