//! Network of 1D quantum harmonic oscillators,
//! `H = sum p_i^2 / 2 m_i + sum_{(i,j)} k_ij (r_i - r_j)^2 / 2
//!      + sum_i kappa_i (r_i - a_i)^2 / 2`.
//!
//! The pairwise potential alone is translation invariant, so every particle
//! may be tied to an anchor `a_i` by a pinning spring `kappa_i`. Anchors of
//! the input particles are the model inputs. The ground state is Gaussian
//! and is obtained from the normal modes of the stiffness matrix `K`.
//!
//! Weights are the pair spring constants `k_ij` (bounded below by zero);
//! masses, pinning constants and `hbar` are fixed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};

/// A cost readout; the target value comes from `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Readout {
    /// `(r_i - y)^2 / 2`.
    Position { i: usize },
    /// `(r_i - r_j - y)^2 / 2`.
    Separation { i: usize, j: usize },
}

#[derive(Debug, Clone)]
pub struct QhoSpec {
    masses: Vec<f64>,
    springs: Vec<(usize, usize)>,
    pinning: Vec<f64>,
    anchors: Vec<f64>,
    hbar: f64,
    input_particles: Vec<usize>,
    readouts: Vec<Readout>,
}

#[derive(Debug, Clone)]
pub struct GaussianGroundState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub ground_energy: f64,
    /// Normal-mode angular frequencies, ascending.
    pub frequencies: Vec<f64>,
    pub hbar: f64,
}

/// `V(r) = r^T K r / 2 - b^T r + c`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub stiffness: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    fn add_pair(&mut self, i: usize, j: usize, k: f64) {
        self.stiffness[(i, i)] += k;
        self.stiffness[(j, j)] += k;
        self.stiffness[(i, j)] -= k;
        self.stiffness[(j, i)] -= k;
    }

    /// Adds `k (r_i - target)^2 / 2`.
    fn add_pin(&mut self, i: usize, k: f64, target: f64) {
        self.stiffness[(i, i)] += k;
        self.linear[i] += k * target;
        self.constant += 0.5 * k * target * target;
    }

    pub fn value(&self, r: &DVector<f64>) -> f64 {
        0.5 * r.dot(&(&self.stiffness * r)) - self.linear.dot(r) + self.constant
    }
}

impl QhoSpec {
    pub fn new(
        masses: Vec<f64>,
        springs: Vec<(usize, usize)>,
        pinning: Vec<f64>,
        anchors: Vec<f64>,
        input_particles: Vec<usize>,
        readouts: Vec<Readout>,
    ) -> Result<Self> {
        let n = masses.len();
        if n == 0 {
            return Err(Error::InvalidArgument("oscillator network needs at least one particle".into()));
        }
        shape_check("pinning constants", n, pinning.len())?;
        shape_check("anchors", n, anchors.len())?;
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(format!("masses must be positive, got {m}")));
        }
        if let Some(k) = pinning.iter().find(|k| !(**k >= 0.0) || !k.is_finite()) {
            return Err(Error::InvalidArgument(format!("pinning constants must be nonnegative, got {k}")));
        }
        if anchors.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("anchors must be finite".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j) in &springs {
            if i >= j || j >= n || !seen.insert((i, j)) {
                return Err(Error::InvalidArgument(format!("spring ({i}, {j}) must satisfy i < j < {n} and appear once")));
            }
        }
        let mut uniq = std::collections::BTreeSet::new();
        if let Some(i) = input_particles.iter().find(|&&i| i >= n || !uniq.insert(i)) {
            return Err(Error::InvalidArgument(format!("input particle {i} out of range or repeated")));
        }
        if let Some(i) = input_particles.iter().find(|&&i| pinning[i] == 0.0) {
            return Err(Error::InvalidArgument(format!("input particle {i} has no pinning spring to carry the input")));
        }
        for r in &readouts {
            let ok = match *r {
                Readout::Position { i } => i < n,
                Readout::Separation { i, j } => i < n && j < n && i != j,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("readout {r:?} out of range")));
            }
        }
        Ok(QhoSpec { masses, springs, pinning, anchors, hbar: 1.0, input_particles, readouts })
    }

    pub fn with_hbar(mut self, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0) || !hbar.is_finite() {
            return Err(Error::InvalidArgument(format!("hbar must be positive, got {hbar}")));
        }
        self.hbar = hbar;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn springs(&self) -> &[(usize, usize)] {
        &self.springs
    }

    pub fn pinning(&self) -> &[f64] {
        &self.pinning
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn input_particles(&self) -> &[usize] {
        &self.input_particles
    }

    pub fn readouts(&self) -> &[Readout] {
        &self.readouts
    }

    pub fn weight_count(&self) -> usize {
        self.springs.len()
    }

    pub fn weight_names(&self) -> Vec<String> {
        self.springs.iter().map(|(i, j)| format!("k[{i},{j}]")).collect()
    }

    /// Potential of `H + beta C` as a quadratic form.
    pub fn quadratic_form(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64) -> Result<QuadraticForm> {
        let n = self.n();
        shape_check("weights", self.springs.len(), w.len())?;
        shape_check("input", self.input_particles.len(), x.len())?;
        if let Some(k) = w.iter().find(|k| !k.is_finite()) {
            return Err(Error::Domain(format!("spring constant {k} is not finite")));
        }
        let mut q = QuadraticForm { stiffness: DMatrix::zeros(n, n), linear: DVector::zeros(n), constant: 0.0 };
        for (&(i, j), &k) in self.springs.iter().zip(w) {
            q.add_pair(i, j, k);
        }
        let mut anchors = self.anchors.clone();
        for (&i, &a) in self.input_particles.iter().zip(x) {
            anchors[i] = a;
        }
        for i in 0..n {
            if self.pinning[i] > 0.0 {
                q.add_pin(i, self.pinning[i], anchors[i]);
            }
        }
        if beta != 0.0 {
            shape_check("target", self.readouts.len(), y.len())?;
            for (r, &t) in self.readouts.iter().zip(y) {
                match *r {
                    Readout::Position { i } => q.add_pin(i, beta, t),
                    Readout::Separation { i, j } => {
                        // (r_i - r_j - t)^2 / 2 = (r_i - r_j)^2 / 2 - t (r_i - r_j) + t^2 / 2
                        q.add_pair(i, j, beta);
                        q.linear[i] += beta * t;
                        q.linear[j] -= beta * t;
                        q.constant += 0.5 * beta * t * t;
                    }
                }
            }
        }
        Ok(q)
    }

    /// Gaussian ground state of `H + beta C`.
    pub fn solve_ground_state(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64) -> Result<GaussianGroundState> {
        let q = self.quadratic_form(w, x, y, beta)?;
        let n = self.n();
        let inv_sqrt_m = DVector::from_iterator(n, self.masses.iter().map(|m| 1.0 / m.sqrt()));
        let d = DMatrix::from_fn(n, n, |i, j| inv_sqrt_m[i] * q.stiffness[(i, j)] * inv_sqrt_m[j]);
        let eig = SymmetricEigen::new(d);
        let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        if let Some(lmin) = eig.eigenvalues.iter().copied().reduce(f64::min).filter(|&l| l <= 1e-12 * scale) {
            let hint = if beta < 0.0 {
                "the negative nudge makes the stiffness matrix indefinite; reduce |beta|"
            } else {
                "add a pinning spring to every connected component"
            };
            return Err(Error::Model(format!(
                "stiffness matrix is not positive definite (smallest mode {lmin:.3e}): {hint}"
            )));
        }
        let omega: Vec<f64> = eig.eigenvalues.iter().map(|l| l.sqrt()).collect();
        let u = &eig.eigenvectors;
        let inv_omega = DMatrix::from_diagonal(&DVector::from_iterator(n, omega.iter().map(|w| 1.0 / w)));
        let core = u * inv_omega * u.transpose();
        let mut cov = DMatrix::from_fn(n, n, |i, j| 0.5 * self.hbar * inv_sqrt_m[i] * core[(i, j)] * inv_sqrt_m[j]);
        cov = (&cov + cov.transpose()) * 0.5;

        let chol = q.stiffness.clone().cholesky().ok_or_else(|| {
            Error::Model("stiffness matrix is not positive definite: add pinning springs".into())
        })?;
        let mean = chol.solve(&q.linear);
        let energy = 0.5 * self.hbar * omega.iter().sum::<f64>() + q.value(&mean);
        let mut frequencies = omega;
        frequencies.sort_by(f64::total_cmp);
        Ok(GaussianGroundState { mean, covariance: cov, ground_energy: energy, frequencies, hbar: self.hbar })
    }

    /// `<(r_i - r_j)^2 / 2>` for every spring, i.e. `<dH/dk_ij>`.
    pub fn derivative_expectations(&self, state: &GaussianGroundState) -> Vec<f64> {
        self.springs.iter().map(|&(i, j)| state.pair_moment(i, j)).collect()
    }

    pub fn cost_expectation(&self, state: &GaussianGroundState, y: &[f64]) -> Result<f64> {
        shape_check("target", self.readouts.len(), y.len())?;
        let (mu, s) = (&state.mean, &state.covariance);
        Ok(self
            .readouts
            .iter()
            .zip(y)
            .map(|(r, &t)| match *r {
                Readout::Position { i } => 0.5 * ((mu[i] - t).powi(2) + s[(i, i)]),
                Readout::Separation { i, j } => {
                    0.5 * ((mu[i] - mu[j] - t).powi(2) + s[(i, i)] + s[(j, j)] - 2.0 * s[(i, j)])
                }
            })
            .sum())
    }

    /// Cost of one sampled position vector.
    pub fn cost_of_positions(&self, r: &[f64], y: &[f64]) -> f64 {
        self.readouts
            .iter()
            .zip(y)
            .map(|(ro, &t)| match *ro {
                Readout::Position { i } => 0.5 * (r[i] - t).powi(2),
                Readout::Separation { i, j } => 0.5 * (r[i] - r[j] - t).powi(2),
            })
            .sum()
    }
}

impl GaussianGroundState {
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    /// `<(r_i - r_j)^2 / 2>`.
    pub fn pair_moment(&self, i: usize, j: usize) -> f64 {
        let (mu, s) = (&self.mean, &self.covariance);
        0.5 * ((mu[i] - mu[j]).powi(2) + s[(i, i)] + s[(j, j)] - 2.0 * s[(i, j)])
    }

    /// `<(r_i - a)^2 / 2>` for a fixed point `a`.
    pub fn anchor_moment(&self, i: usize, a: f64) -> f64 {
        0.5 * ((self.mean[i] - a).powi(2) + self.covariance[(i, i)])
    }

    /// Lower-triangular factor of the covariance.
    pub fn sampling_factor(&self) -> Result<DMatrix<f64>> {
        self.covariance
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))
    }

    /// `shots` joint position measurements from fresh copies of the state.
    pub fn sample_positions<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if shots == 0 {
            return Err(Error::InvalidArgument("shot count must be at least 1".into()));
        }
        let l = self.sampling_factor()?;
        Ok((0..shots).map(|_| self.sample_with(&l, rng)).collect())
    }

    pub(crate) fn sample_with<R: Rng + ?Sized>(&self, l: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
        let n = self.n();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.mean + l * z).iter().copied().collect()
    }

    /// The lowest `count` energy levels `E_0 + hbar sum_a n_a omega_a`.
    pub fn lowest_levels(&self, count: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, Vec<u32>);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
            }
        }
        let modes = self.frequencies.len();
        let mut heap = BinaryHeap::new();
        let mut seen = HashSet::new();
        let zero = vec![0u32; modes];
        seen.insert(zero.clone());
        heap.push(Item(self.ground_energy, zero));
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let Some(Item(e, occ)) = heap.pop() else { break };
            out.push(e);
            for a in 0..modes {
                let mut next = occ.clone();
                next[a] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Item(e + self.hbar * self.frequencies[a], next));
                }
            }
        }
        out
    }
}
