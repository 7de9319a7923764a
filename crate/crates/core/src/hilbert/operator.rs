use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

use super::state::StateVector;

/// Entries with magnitude at or below this are dropped on construction.
const DROP_TOLERANCE: f64 = 1e-15;
/// Relative tolerance for the entry-wise Hermiticity check.
const HERMITIAN_TOLERANCE: f64 = 1e-12;
/// Dimension above which operator application fans out over rows.
const PARALLEL_ROWS: usize = 1 << 12;

/// Structural class of an operator, inferred from its sparsity pattern.
///
/// `Diagonal` operators are diagonal in the computational (Z) basis.
/// `BitFlip` operators are real combinations of X-strings, `sum_m c_m X^m`,
/// and are therefore diagonal in the Hadamard (X) basis. Two operators of
/// the same non-generic class always commute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Diagonal,
    BitFlip,
    Generic,
}

/// Sparse self-adjoint operator in compressed-row form.
#[derive(Clone)]
pub struct HermitianOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Complex64>,
    structure: Structure,
    label: Option<String>,
}

impl fmt::Debug for HermitianOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HermitianOperator")
            .field("dim", &self.dim)
            .field("nnz", &self.nnz())
            .field("structure", &self.structure)
            .field("label", &self.label)
            .finish()
    }
}

impl HermitianOperator {
    /// Builds an operator from `(row, col, value)` triplets. Duplicates are
    /// summed. Fails if the result is not Hermitian.
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, Complex64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("operator dimension must be >= 1".into()));
        }
        let mut rows: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); dim];
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::Shape(format!("entry ({r}, {c}) outside dimension {dim}")));
            }
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Domain(format!("non-finite entry at ({r}, {c})")));
            }
            *rows[r].entry(c).or_default() += v;
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                if v.norm() > DROP_TOLERANCE {
                    cols.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self::from_csr(dim, row_ptr, cols, values)
    }

    pub fn from_real_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        Self::from_triplets(dim, triplets.into_iter().map(|(r, c, v)| (r, c, Complex64::new(v, 0.0))))
    }

    /// Assembles from raw CSR arrays. Column indices must be strictly
    /// increasing within each row.
    pub fn from_csr(dim: usize, row_ptr: Vec<usize>, cols: Vec<usize>, values: Vec<Complex64>) -> Result<Self> {
        if row_ptr.len() != dim + 1 || cols.len() != values.len() || row_ptr[dim] != cols.len() {
            return Err(Error::Shape("inconsistent CSR arrays".into()));
        }
        for r in 0..dim {
            let row = &cols[row_ptr[r]..row_ptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= dim) {
                return Err(Error::Shape(format!("row {r} has unsorted or out-of-range columns")));
            }
        }
        let mut op = HermitianOperator {
            dim,
            row_ptr,
            cols,
            values,
            structure: Structure::Generic,
            label: None,
        };
        op.check_hermitian()?;
        op.structure = op.infer_structure();
        Ok(op)
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Result<Self> {
        let dim = diag.len();
        Self::from_real_triplets(dim, diag.into_iter().enumerate().map(|(i, v)| (i, i, v)))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_diagonal(vec![1.0; dim])
    }

    pub fn from_dense(m: &DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!("matrix is {}x{}", m.nrows(), m.ncols())));
        }
        let d = m.nrows();
        Self::from_triplets(d, (0..d).flat_map(|r| (0..d).map(move |c| (r, c, m[(r, c)]))))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// The label if one was set, otherwise a short structural description.
    pub fn id(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{:?}[d={}, nnz={}]", self.structure, self.dim, self.nnz()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Diagonal entries as reals.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i).re).collect()
    }

    /// X-string coefficients `c_m` for a [`Structure::BitFlip`] operator,
    /// read off row 0.
    pub fn bitflip_coefficients(&self) -> Option<Vec<(usize, f64)>> {
        (self.structure == Structure::BitFlip).then(|| self.row(0).map(|(c, v)| (c, v.re)).collect())
    }

    fn check_hermitian(&self) -> Result<()> {
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                let t = self.get(c, r).conj();
                if (v - t).norm() > HERMITIAN_TOLERANCE * v.norm().max(1.0) {
                    return Err(Error::Domain(format!(
                        "operator is not Hermitian: entry ({r}, {c}) = {v} but ({c}, {r}) = {}",
                        self.get(c, r)
                    )));
                }
            }
        }
        Ok(())
    }

    fn infer_structure(&self) -> Structure {
        if (0..self.dim).all(|r| self.row(r).all(|(c, _)| c == r)) {
            return Structure::Diagonal;
        }
        if !self.dim.is_power_of_two() || !self.is_real() {
            return Structure::Generic;
        }
        let head: BTreeMap<usize, f64> = self.row(0).map(|(c, v)| (c, v.re)).collect();
        let row_len = head.len();
        let bitflip = (0..self.dim).all(|r| {
            self.row_ptr[r + 1] - self.row_ptr[r] == row_len
                && self.row(r).all(|(c, v)| head.get(&(r ^ c)).is_some_and(|&h| h == v.re))
        });
        if bitflip {
            Structure::BitFlip
        } else {
            Structure::Generic
        }
    }

    /// Computes `H v`.
    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        self.apply_with(Execution::default(), v)
    }

    pub fn apply_with(&self, exec: Execution, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("operator of dimension {} applied to vector of length {}", self.dim, v.len())));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        let exec = if self.dim >= PARALLEL_ROWS { exec } else { Execution::Sequential };
        par::fill_indexed(exec, &mut out, |r| self.row(r).map(|(c, a)| a * v[c]).sum());
        Ok(out)
    }

    /// `<psi|H|psi>` without the realness assertion.
    pub(crate) fn quadratic_form(&self, psi: &[Complex64]) -> Result<Complex64> {
        let hv = self.apply(psi)?;
        Ok(psi.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum())
    }

    /// `<psi|H|psi>`. Panics in debug builds if the imaginary residue
    /// exceeds `1e-10 * max(1, ||H||)`.
    pub fn expectation(&self, psi: &StateVector) -> Result<f64> {
        let z = self.quadratic_form(psi.amplitudes())?;
        let bound = 1e-10 * self.norm_bound().max(1.0);
        if z.im.abs() > bound {
            return Err(Error::Domain(format!("expectation has imaginary residue {:.3e}", z.im)));
        }
        Ok(z.re)
    }

    /// Maximum absolute row sum, an upper bound on the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|r| self.row(r).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, factor: f64) -> HermitianOperator {
        let mut out = self.clone();
        if factor == 0.0 {
            out.cols.clear();
            out.values.clear();
            out.row_ptr.iter_mut().for_each(|p| *p = 0);
            out.structure = Structure::Diagonal;
            return out;
        }
        for v in &mut out.values {
            *v *= factor;
        }
        out
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &HermitianOperator, factor: f64) -> Result<HermitianOperator> {
        self.require_same_dim(other)?;
        let triplets = (0..self.dim).flat_map(|r| {
            self.row(r)
                .map(move |(c, v)| (r, c, v))
                .chain(other.row(r).map(move |(c, v)| (r, c, v * factor)))
        });
        let mut out = Self::from_triplets(self.dim, triplets.collect::<Vec<_>>())?;
        out.label = None;
        Ok(out)
    }

    pub fn add(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        self.add_scaled(other, 1.0)
    }

    fn require_same_dim(&self, other: &HermitianOperator) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!("operator dimensions {} and {} differ", self.dim, other.dim)));
        }
        Ok(())
    }

    /// Frobenius norm of `[A, B]`.
    ///
    /// Operators of the same structural class commute by construction, so
    /// the product is skipped for them.
    pub fn commutator_norm(&self, other: &HermitianOperator) -> Result<f64> {
        self.require_same_dim(other)?;
        match (self.structure, other.structure) {
            (Structure::Diagonal, Structure::Diagonal) | (Structure::BitFlip, Structure::BitFlip) => return Ok(0.0),
            _ => {}
        }
        let rows = par::map_range(Execution::default(), self.dim, |r| {
            let mut acc: BTreeMap<usize, Complex64> = BTreeMap::new();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    *acc.entry(c).or_default() += a * b;
                }
            }
            for (k, b) in other.row(r) {
                for (c, a) in self.row(k) {
                    *acc.entry(c).or_default() -= b * a;
                }
            }
            acc.values().map(|z| z.norm_sqr()).sum::<f64>()
        });
        Ok(rows.iter().sum::<f64>().sqrt())
    }

    /// Tests commutation against `1e-10 * max(1, ||A|| ||B||)`.
    pub fn commutes_with(&self, other: &HermitianOperator) -> Result<bool> {
        let tol = 1e-10 * (self.norm_bound() * other.norm_bound()).max(1.0);
        Ok(self.commutator_norm(other)? <= tol)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn to_dense_real(&self) -> Option<DMatrix<f64>> {
        self.is_real().then(|| {
            let mut m = DMatrix::zeros(self.dim, self.dim);
            for r in 0..self.dim {
                for (c, v) in self.row(r) {
                    m[(r, c)] = v.re;
                }
            }
            m
        })
    }
}

/// Pauli strings on `n` qubits. Qubit `k` is bit `k` of the basis index and
/// spin up is bit 0, so `Z_k |i> = (1 - 2 bit_k(i)) |i>`.
pub mod pauli {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Pauli {
        X,
        Y,
        Z,
    }

    /// Spin value `+1` for bit 0, `-1` for bit 1.
    #[inline]
    pub fn z_sign(index: usize, k: usize) -> f64 {
        if (index >> k) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn check_qubits(n: usize, factors: &[(Pauli, usize)]) -> Result<()> {
        if n == 0 || n > 24 {
            return Err(Error::InvalidArgument(format!("qubit count {n} outside 1..=24")));
        }
        let mut seen = 0usize;
        for &(_, k) in factors {
            if k >= n {
                return Err(Error::InvalidArgument(format!("qubit index {k} out of range for {n} qubits")));
            }
            if seen & (1 << k) != 0 {
                return Err(Error::InvalidArgument(format!("qubit {k} appears twice in Pauli string")));
            }
            seen |= 1 << k;
        }
        Ok(())
    }

    /// Tensor product of single-qubit Paulis on distinct qubits.
    pub fn string(n: usize, factors: &[(Pauli, usize)]) -> Result<HermitianOperator> {
        check_qubits(n, factors)?;
        let dim = 1usize << n;
        let mut flip = 0usize;
        for &(p, k) in factors {
            if p != Pauli::Z {
                flip |= 1 << k;
            }
        }
        let triplets = (0..dim).map(|col| {
            let mut phase = Complex64::new(1.0, 0.0);
            for &(p, k) in factors {
                let s = z_sign(col, k);
                phase *= match p {
                    Pauli::X => Complex64::new(1.0, 0.0),
                    Pauli::Z => Complex64::new(s, 0.0),
                    Pauli::Y => Complex64::new(0.0, s),
                };
            }
            (col ^ flip, col, phase)
        });
        Ok(HermitianOperator::from_triplets(dim, triplets.collect::<Vec<_>>())?.with_label(format_string(factors)))
    }

    pub fn x(n: usize, k: usize) -> Result<HermitianOperator> {
        string(n, &[(Pauli::X, k)])
    }

    pub fn z(n: usize, k: usize) -> Result<HermitianOperator> {
        string(n, &[(Pauli::Z, k)])
    }

    pub fn zz(n: usize, j: usize, k: usize) -> Result<HermitianOperator> {
        string(n, &[(Pauli::Z, j), (Pauli::Z, k)])
    }

    /// Parses identifiers like `Z0`, `X3`, `Z0Z2`, `X1Y2`.
    pub fn parse(n: usize, id: &str) -> Result<HermitianOperator> {
        let bad = || Error::InvalidArgument(format!("cannot parse Pauli string `{id}`"));
        let mut factors = Vec::new();
        let mut chars = id.trim().chars().peekable();
        while let Some(ch) = chars.next() {
            let p = match ch.to_ascii_uppercase() {
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                _ => return Err(bad()),
            };
            let mut digits = String::new();
            while let Some(d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                digits.push(*d);
                chars.next();
            }
            factors.push((p, digits.parse::<usize>().map_err(|_| bad())?));
        }
        if factors.is_empty() {
            return Err(bad());
        }
        string(n, &factors)
    }

    fn format_string(factors: &[(Pauli, usize)]) -> String {
        factors.iter().map(|(p, k)| format!("{p:?}{k}")).collect()
    }
}
