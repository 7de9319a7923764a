//! Transverse-field Ising model `H = -sum_{j<k} J_jk Z_j Z_k - sum_k h_k X_k`.
//!
//! Unlike the classical Ising network, the per-spin fields here couple to
//! `X`, not `Z`: `X_k` flips spin `k`, `Z_k` reads its sign. Spin `k` is bit
//! `k` of the basis index and spin up is bit 0.
//!
//! Weights are the couplings (in coupling order) followed by one field per
//! spin. Inputs are offsets added to the fields of the input spins.

use num_complex::Complex64;

use crate::error::{shape_check, Error, Result};
use crate::hilbert::operator::pauli::z_sign;
use crate::hilbert::{HermitianOperator, StateVector};

pub const MAX_SPINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightId {
    Coupling { j: usize, k: usize },
    Field(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliKind {
    ZZ(usize, usize),
    X(usize),
}

/// One Hamiltonian term `coefficient * P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliTerm {
    pub kind: PauliKind,
    pub coefficient: f64,
}

/// The two commuting families of derivative observables, as weight
/// indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Families {
    /// `-Z_j Z_k` observables, diagonal in the computational basis.
    pub zz: Vec<usize>,
    /// `-X_k` observables, diagonal in the Hadamard basis.
    pub x: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TfimSpec {
    n: usize,
    couplings: Vec<(usize, usize)>,
    input_spins: Vec<usize>,
    output_spins: Vec<usize>,
    readout_reference: Option<usize>,
}

impl TfimSpec {
    pub fn new(n: usize, couplings: Vec<(usize, usize)>, input_spins: Vec<usize>, output_spins: Vec<usize>) -> Result<Self> {
        if !(1..=MAX_SPINS).contains(&n) {
            return Err(Error::InvalidArgument(format!("spin count must be in 1..={MAX_SPINS}, got {n}")));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(j, k) in &couplings {
            if j >= k || k >= n || !seen.insert((j, k)) {
                return Err(Error::InvalidArgument(format!(
                    "coupling ({j}, {k}) must satisfy j < k < {n} and appear once"
                )));
            }
        }
        for (what, set) in [("input", &input_spins), ("output", &output_spins)] {
            let mut uniq = std::collections::BTreeSet::new();
            if let Some(i) = set.iter().find(|&&i| i >= n || !uniq.insert(i)) {
                return Err(Error::InvalidArgument(format!("{what} spin {i} out of range or repeated")));
            }
        }
        Ok(TfimSpec { n, couplings, input_spins, output_spins, readout_reference: None })
    }

    /// All-to-all couplings.
    pub fn complete(n: usize, input_spins: Vec<usize>, output_spins: Vec<usize>) -> Result<Self> {
        let couplings = (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect();
        Self::new(n, couplings, input_spins, output_spins)
    }

    /// Reads outputs relative to a reference spin: the cost becomes
    /// `sum_out (1 - y_k Z_ref Z_k) / 2`.
    ///
    /// The plain readout `Z_k` has zero expectation in every nondegenerate
    /// eigenstate, because `prod_k X_k` commutes with `H` and anticommutes
    /// with each `Z_k`. Correlations `Z_ref Z_k` are invariant under that
    /// flip and so can be trained.
    pub fn with_readout_reference(mut self, reference: Option<usize>) -> Result<Self> {
        if let Some(r) = reference {
            if r >= self.n || self.output_spins.contains(&r) {
                return Err(Error::InvalidArgument(format!(
                    "readout reference {r} out of range or listed as an output"
                )));
            }
        }
        self.readout_reference = reference;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn couplings(&self) -> &[(usize, usize)] {
        &self.couplings
    }

    pub fn input_spins(&self) -> &[usize] {
        &self.input_spins
    }

    pub fn output_spins(&self) -> &[usize] {
        &self.output_spins
    }

    pub fn readout_reference(&self) -> Option<usize> {
        self.readout_reference
    }

    pub fn weight_count(&self) -> usize {
        self.couplings.len() + self.n
    }

    pub fn weight_ids(&self) -> Vec<WeightId> {
        self.couplings
            .iter()
            .map(|&(j, k)| WeightId::Coupling { j, k })
            .chain((0..self.n).map(WeightId::Field))
            .collect()
    }

    pub fn weight_names(&self) -> Vec<String> {
        self.weight_ids()
            .into_iter()
            .map(|id| match id {
                WeightId::Coupling { j, k } => format!("J[{j},{k}]"),
                WeightId::Field(k) => format!("h[{k}]"),
            })
            .collect()
    }

    pub fn weight_index(&self, id: WeightId) -> Result<usize> {
        let found = match id {
            WeightId::Coupling { j, k } => self.couplings.iter().position(|&c| c == (j, k)),
            WeightId::Field(k) => (k < self.n).then_some(self.couplings.len() + k),
        };
        found.ok_or_else(|| Error::InvalidArgument(format!("unknown weight {id:?}")))
    }

    /// Fields after adding the input offsets.
    pub fn effective_fields(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        shape_check("weights", self.weight_count(), w.len())?;
        shape_check("input", self.input_spins.len(), x.len())?;
        let mut h = w[self.couplings.len()..].to_vec();
        for (&k, &v) in self.input_spins.iter().zip(x) {
            h[k] += v;
        }
        Ok(h)
    }

    pub fn terms(&self, w: &[f64], x: &[f64]) -> Result<Vec<PauliTerm>> {
        let h = self.effective_fields(w, x)?;
        Ok(self
            .couplings
            .iter()
            .zip(w)
            .map(|(&(j, k), &v)| PauliTerm { kind: PauliKind::ZZ(j, k), coefficient: -v })
            .chain(h.iter().enumerate().map(|(k, &v)| PauliTerm { kind: PauliKind::X(k), coefficient: -v }))
            .collect())
    }

    /// Diagonal of `sum_{j<k} -J_jk Z_j Z_k`.
    fn zz_diagonal(&self, w: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                self.couplings
                    .iter()
                    .zip(w)
                    .map(|(&(j, k), &v)| -v * z_sign(i, j) * z_sign(i, k))
                    .sum()
            })
            .collect()
    }

    /// Diagonal of the cost observable.
    pub fn cost_diagonal(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.output_spins.is_empty() {
            return Err(Error::Model("cost observable needs at least one output spin".into()));
        }
        shape_check("target", self.output_spins.len(), y.len())?;
        Ok((0..self.dim())
            .map(|i| {
                let r = self.readout_reference.map_or(1.0, |r| z_sign(i, r));
                self.output_spins
                    .iter()
                    .zip(y)
                    .map(|(&k, &yk)| 0.5 * (1.0 - yk * r * z_sign(i, k)))
                    .sum()
            })
            .collect())
    }

    /// `H(w, x) + beta * C(y)` assembled row by row from bitwise Pauli
    /// action. `y` is ignored when `beta == 0`.
    pub fn nudged_hamiltonian(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64) -> Result<HermitianOperator> {
        let h = self.effective_fields(w, x)?;
        let mut diag = self.zz_diagonal(w);
        if beta != 0.0 {
            for (d, c) in diag.iter_mut().zip(self.cost_diagonal(y)?) {
                *d += beta * c;
            }
        }
        let dim = self.dim();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(self.n + 1);
        for i in 0..dim {
            row.clear();
            if diag[i] != 0.0 {
                row.push((i, diag[i]));
            }
            for (k, &hk) in h.iter().enumerate() {
                if hk != 0.0 {
                    row.push((i ^ (1 << k), -hk));
                }
            }
            row.sort_by_key(|e| e.0);
            for &(c, v) in &row {
                cols.push(c);
                values.push(Complex64::new(v, 0.0));
            }
            row_ptr.push(cols.len());
        }
        HermitianOperator::from_csr(dim, row_ptr, cols, values)
    }

    pub fn build_hamiltonian(&self, w: &[f64], x: &[f64]) -> Result<HermitianOperator> {
        Ok(self.nudged_hamiltonian(w, x, &[], 0.0)?.with_label("H"))
    }

    /// `dH/dw` for one weight: `-Z_j Z_k` or `-X_k`.
    pub fn derivative_observable(&self, id: WeightId) -> Result<HermitianOperator> {
        self.weight_index(id)?;
        let (op, label) = match id {
            WeightId::Coupling { j, k } => (crate::hilbert::pauli::zz(self.n, j, k)?, format!("dH/dJ[{j},{k}]")),
            WeightId::Field(k) => (crate::hilbert::pauli::x(self.n, k)?, format!("dH/dh[{k}]")),
        };
        Ok(op.scale(-1.0).with_label(label))
    }

    pub fn derivative_observables(&self) -> Result<Vec<HermitianOperator>> {
        self.weight_ids().into_iter().map(|id| self.derivative_observable(id)).collect()
    }

    pub fn cost_observable(&self, y: &[f64]) -> Result<HermitianOperator> {
        Ok(HermitianOperator::from_diagonal(self.cost_diagonal(y)?)?.with_label("C"))
    }

    pub fn commuting_families(&self) -> Families {
        let nc = self.couplings.len();
        Families { zz: (0..nc).collect(), x: (nc..nc + self.n).collect() }
    }

    /// `<psi| dH/dw |psi>` for every weight, evaluated bitwise.
    pub fn derivative_expectations(&self, psi: &StateVector) -> Result<Vec<f64>> {
        shape_check("state", self.dim(), psi.dim())?;
        let a = psi.amplitudes();
        let p = psi.probabilities();
        let zz = self.couplings.iter().map(|&(j, k)| {
            -p.iter().enumerate().map(|(i, pi)| pi * z_sign(i, j) * z_sign(i, k)).sum::<f64>()
        });
        let xs = (0..self.n).map(|k| {
            -a.iter()
                .enumerate()
                .map(|(i, ai)| (a[i ^ (1 << k)].conj() * ai).re)
                .sum::<f64>()
        });
        Ok(zz.chain(xs).collect())
    }

    pub fn cost_expectation(&self, psi: &StateVector, y: &[f64]) -> Result<f64> {
        shape_check("state", self.dim(), psi.dim())?;
        Ok(self.cost_diagonal(y)?.iter().zip(psi.probabilities()).map(|(c, p)| c * p).sum())
    }
}
