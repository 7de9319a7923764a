use serde::{Deserialize, Serialize};

use crate::energy::{EnergyModel, Equilibrium};
use crate::error::{shape_check, Error, Result};
use crate::rng::StreamKey;
use rand::Rng;

/// Largest spin count accepted by exhaustive search.
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IsingSolver {
    /// Exact minimisation over every free configuration.
    #[default]
    Exhaustive,
    /// Metropolis annealing with a geometric temperature schedule from
    /// 1.0 to 1e-3, followed by greedy single-flip descent.
    Annealing { sweeps: usize, seed: u64 },
}

/// Ising spin network with `E = -sum_{j<k} J_jk s_j s_k - sum_k h_k s_k`.
///
/// Inputs clamp designated spins to `x in {-1, +1}`; the cost is
/// `sum_out (1 - y_k s_k) / 2`. Weights are ordered as the couplings (in
/// edge order) followed by one bias per spin.
#[derive(Debug, Clone)]
pub struct IsingModel {
    n: usize,
    edges: Vec<(usize, usize)>,
    input_spins: Vec<usize>,
    output_spins: Vec<usize>,
    solver: IsingSolver,
}

fn is_spin(v: f64) -> bool {
    v == 1.0 || v == -1.0
}

impl IsingModel {
    pub fn new(n: usize, edges: Vec<(usize, usize)>, input_spins: Vec<usize>, output_spins: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("Ising model needs at least one spin".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(j, k) in &edges {
            if j >= k {
                return Err(Error::InvalidArgument(format!("coupling ({j}, {k}) must satisfy j < k")));
            }
            if k >= n {
                return Err(Error::InvalidArgument(format!("coupling ({j}, {k}) out of range for {n} spins")));
            }
            if !seen.insert((j, k)) {
                return Err(Error::InvalidArgument(format!("duplicate coupling ({j}, {k})")));
            }
        }
        for (what, set) in [("input", &input_spins), ("output", &output_spins)] {
            let mut uniq = std::collections::BTreeSet::new();
            for &i in set.iter() {
                if i >= n || !uniq.insert(i) {
                    return Err(Error::InvalidArgument(format!("{what} spin {i} out of range or repeated")));
                }
            }
        }
        if let Some(i) = input_spins.iter().find(|i| output_spins.contains(i)) {
            return Err(Error::InvalidArgument(format!("spin {i} is both clamped and read out")));
        }
        Ok(IsingModel { n, edges, input_spins, output_spins, solver: IsingSolver::Exhaustive })
    }

    /// All-to-all couplings.
    pub fn complete(n: usize, input_spins: Vec<usize>, output_spins: Vec<usize>) -> Result<Self> {
        let edges = (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect();
        Self::new(n, edges, input_spins, output_spins)
    }

    pub fn with_solver(mut self, solver: IsingSolver) -> Self {
        self.solver = solver;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn input_spins(&self) -> &[usize] {
        &self.input_spins
    }

    pub fn output_spins(&self) -> &[usize] {
        &self.output_spins
    }

    pub fn solver(&self) -> IsingSolver {
        self.solver
    }

    fn free_spins(&self) -> Vec<usize> {
        (0..self.n).filter(|i| !self.input_spins.contains(i)).collect()
    }

    fn split<'a>(&self, w: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        shape_check("weights", self.weight_count(), w.len())?;
        Ok(w.split_at(self.edges.len()))
    }

    fn check_state(&self, x: &[f64], s: &[f64]) -> Result<()> {
        shape_check("spin state", self.n, s.len())?;
        shape_check("input", self.input_spins.len(), x.len())?;
        if let Some((i, v)) = s.iter().enumerate().find(|(_, v)| !is_spin(**v)) {
            return Err(Error::Domain(format!("spin {i} has value {v}, expected +1 or -1")));
        }
        for (&i, &v) in self.input_spins.iter().zip(x) {
            if s[i] != v {
                return Err(Error::Domain(format!("clamped spin {i} is {} but input is {v}", s[i])));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        shape_check("input", self.input_spins.len(), x.len())?;
        if let Some(v) = x.iter().find(|v| !is_spin(**v)) {
            return Err(Error::Domain(format!("input value {v} is not +1 or -1")));
        }
        Ok(())
    }

    /// Dense symmetric coupling matrix.
    fn coupling_matrix(&self, couplings: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for (&(j, k), &v) in self.edges.iter().zip(couplings) {
            m[j * n + k] = v;
            m[k * n + j] = v;
        }
        m
    }

    /// Field entering `-s_k * field_k` in the total energy.
    fn effective_bias(&self, biases: &[f64], y: &[f64], beta: f64) -> Vec<f64> {
        let mut b = biases.to_vec();
        if beta != 0.0 {
            for (&k, &yk) in self.output_spins.iter().zip(y) {
                b[k] += 0.5 * beta * yk;
            }
        }
        b
    }

    fn total(&self, jm: &[f64], bias: &[f64], s: &[f64], y: &[f64], beta: f64) -> f64 {
        let n = self.n;
        let mut e = 0.0;
        for j in 0..n {
            for k in j + 1..n {
                e -= jm[j * n + k] * s[j] * s[k];
            }
            e -= bias[j] * s[j];
        }
        if beta != 0.0 {
            e += 0.5 * beta * y.len() as f64;
        }
        e
    }

    fn local_fields(&self, jm: &[f64], bias: &[f64], s: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| bias[k] + (0..n).map(|j| jm[k * n + j] * s[j]).sum::<f64>())
            .collect()
    }

    fn flip(&self, jm: &[f64], fields: &mut [f64], s: &mut [f64], k: usize) {
        let n = self.n;
        let delta = -2.0 * s[k];
        s[k] = -s[k];
        for j in 0..n {
            fields[j] += jm[j * n + k] * delta;
        }
    }

    /// Largest decrease available from one free flip.
    fn flip_residual(&self, fields: &[f64], s: &[f64], free: &[usize]) -> f64 {
        free.iter().map(|&k| -2.0 * s[k] * fields[k]).fold(0.0, f64::max)
    }

    fn initial_state(&self, x: &[f64], warm_start: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut s = match warm_start {
            Some(w) => {
                shape_check("warm start", self.n, w.len())?;
                if let Some(v) = w.iter().find(|v| !is_spin(**v)) {
                    return Err(Error::Domain(format!("warm start has non-spin value {v}")));
                }
                w.to_vec()
            }
            None => vec![1.0; self.n],
        };
        for (&i, &v) in self.input_spins.iter().zip(x) {
            s[i] = v;
        }
        Ok(s)
    }

    fn energy_scale(&self, w: &[f64], beta: f64) -> f64 {
        1.0 + w.iter().map(|v| v.abs()).sum::<f64>() + beta.abs() * self.output_spins.len() as f64
    }

    fn exhaustive(&self, jm: &[f64], bias: &[f64], mut s: Vec<f64>, y: &[f64], beta: f64, tol: f64) -> Result<Equilibrium> {
        if self.n > EXHAUSTIVE_LIMIT {
            return Err(Error::Capacity(format!(
                "exhaustive search supports at most {EXHAUSTIVE_LIMIT} spins, model has {}; use the annealing solver",
                self.n
            )));
        }
        let free = self.free_spins();
        let mut fields = self.local_fields(jm, bias, &s);
        let mut energy = self.total(jm, bias, &s, y, beta);
        let mut best = s.clone();
        let mut best_energy = energy;
        let mut degenerate = false;
        // Gray-code walk from the starting configuration, so the start wins
        // exact ties.
        let count = 1u64 << free.len();
        for t in 1..count {
            let k = free[t.trailing_zeros() as usize];
            energy += 2.0 * s[k] * fields[k];
            self.flip(jm, &mut fields, &mut s, k);
            if energy < best_energy - tol {
                best_energy = energy;
                best.copy_from_slice(&s);
                degenerate = false;
            } else if (energy - best_energy).abs() <= tol {
                degenerate = true;
            }
        }
        let fields = self.local_fields(jm, bias, &best);
        Ok(Equilibrium {
            residual: self.flip_residual(&fields, &best, &free),
            state: best,
            iterations: count as usize,
            degenerate,
            flagged: false,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn anneal(&self, jm: &[f64], bias: &[f64], mut s: Vec<f64>, x: &[f64], y: &[f64], beta: f64, sweeps: usize, seed: u64, tol: f64) -> Equilibrium {
        let free = self.free_spins();
        let mut fields = self.local_fields(jm, bias, &s);
        let tag = x.iter().chain(y).fold(beta.to_bits(), |h, v| h.rotate_left(7) ^ v.to_bits());
        let mut rng = StreamKey::new(seed).child(tag).rng();
        let (t0, t1) = (1.0f64, 1e-3f64);
        for sweep in 0..sweeps {
            let frac = if sweeps > 1 { sweep as f64 / (sweeps - 1) as f64 } else { 1.0 };
            let temp = t0 * (t1 / t0).powf(frac);
            for &k in &free {
                let de = 2.0 * s[k] * fields[k];
                if de <= 0.0 || rng.random::<f64>() < (-de / temp).exp() {
                    self.flip(jm, &mut fields, &mut s, k);
                }
            }
        }
        let mut iterations = sweeps * free.len();
        loop {
            let (k, de) = free
                .iter()
                .map(|&k| (k, 2.0 * s[k] * fields[k]))
                .fold((usize::MAX, 0.0), |acc, c| if c.1 < acc.1 { c } else { acc });
            if k == usize::MAX || de >= -tol {
                break;
            }
            self.flip(jm, &mut fields, &mut s, k);
            iterations += 1;
        }
        let degenerate = free.iter().any(|&k| (2.0 * s[k] * fields[k]).abs() <= tol);
        Equilibrium {
            residual: self.flip_residual(&fields, &s, &free),
            state: s,
            iterations,
            degenerate,
            flagged: false,
        }
    }
}

impl EnergyModel for IsingModel {
    fn weight_count(&self) -> usize {
        self.edges.len() + self.n
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.input_spins.len()
    }
    fn target_dim(&self) -> usize {
        self.output_spins.len()
    }

    fn weight_names(&self) -> Vec<String> {
        self.edges
            .iter()
            .map(|(j, k)| format!("J[{j},{k}]"))
            .chain((0..self.n).map(|k| format!("h[{k}]")))
            .collect()
    }

    fn energy(&self, w: &[f64], x: &[f64], s: &[f64]) -> Result<f64> {
        let (couplings, biases) = self.split(w)?;
        self.check_state(x, s)?;
        let pair: f64 = self.edges.iter().zip(couplings).map(|(&(j, k), v)| v * s[j] * s[k]).sum();
        let field: f64 = biases.iter().zip(s).map(|(h, v)| h * v).sum();
        Ok(-pair - field)
    }

    fn energy_weight_gradient(&self, w: &[f64], x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        self.split(w)?;
        self.check_state(x, s)?;
        Ok(self
            .edges
            .iter()
            .map(|&(j, k)| -s[j] * s[k])
            .chain(s.iter().map(|v| -v))
            .collect())
    }

    fn cost(&self, s: &[f64], y: &[f64]) -> Result<f64> {
        shape_check("spin state", self.n, s.len())?;
        shape_check("target", self.output_spins.len(), y.len())?;
        Ok(self.output_spins.iter().zip(y).map(|(&k, yk)| 0.5 * (1.0 - yk * s[k])).sum())
    }

    fn cost_state_gradient(&self, s: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        shape_check("spin state", self.n, s.len())?;
        shape_check("target", self.output_spins.len(), y.len())?;
        let mut g = vec![0.0; self.n];
        for (&k, yk) in self.output_spins.iter().zip(y) {
            g[k] = -0.5 * yk;
        }
        Ok(g)
    }

    fn equilibrate(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64, warm_start: Option<&[f64]>) -> Result<Equilibrium> {
        let (couplings, biases) = self.split(w)?;
        self.check_input(x)?;
        shape_check("target", self.output_spins.len(), y.len())?;
        let jm = self.coupling_matrix(couplings);
        let bias = self.effective_bias(biases, y, beta);
        let s = self.initial_state(x, warm_start)?;
        let tol = 1e-10 * self.energy_scale(w, beta);
        match self.solver {
            IsingSolver::Exhaustive => self.exhaustive(&jm, &bias, s, y, beta, tol),
            IsingSolver::Annealing { sweeps, seed } => Ok(self.anneal(&jm, &bias, s, x, y, beta, sweeps, seed, tol)),
        }
    }
}
