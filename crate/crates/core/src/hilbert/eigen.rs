use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamKey;

use super::operator::HermitianOperator;
use super::state::{l2_norm, StateVector};

/// Largest dimension handled by dense diagonalisation under
/// [`EigenMethod::Auto`].
pub const DENSE_LIMIT: usize = 4096;
/// Gaps below this mark an eigenvalue as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-8;

const LANCZOS_BLOCK: usize = 80;
const LANCZOS_RESTARTS: usize = 60;
const LANCZOS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub eigenvalue: f64,
    pub eigenvector: StateVector,
    pub index: usize,
    /// `E_{k+1} - E_k`, or `+inf` for the top level. For a Lanczos solve this
    /// is the gap to the next Ritz value.
    pub gap_to_next: f64,
    /// Set when the level is within [`DEGENERACY_GAP`] of a neighbour.
    pub degenerate: bool,
    /// `||H psi - E psi||`.
    pub residual: f64,
}

/// Full eigendecomposition, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<StateVector>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn gap_after(&self, k: usize) -> f64 {
        if k + 1 < self.values.len() {
            self.values[k + 1] - self.values[k]
        } else {
            f64::INFINITY
        }
    }

    pub fn is_degenerate(&self, k: usize) -> bool {
        let below = k > 0 && self.values[k] - self.values[k - 1] < DEGENERACY_GAP;
        below || self.gap_after(k) < DEGENERACY_GAP
    }

    pub fn solution(&self, op: &HermitianOperator, k: usize) -> Result<EigenSolution> {
        if k >= self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "eigenstate index {k} out of range for dimension {}",
                self.values.len()
            )));
        }
        let eigenvector = self.vectors[k].clone();
        Ok(EigenSolution {
            eigenvalue: self.values[k],
            residual: residual(op, &eigenvector, self.values[k])?,
            eigenvector,
            index: k,
            gap_to_next: self.gap_after(k),
            degenerate: self.is_degenerate(k),
        })
    }
}

/// Dense eigendecomposition of the whole operator.
pub fn spectrum(op: &HermitianOperator) -> Result<Spectrum> {
    if op.dim() > DENSE_LIMIT {
        return Err(Error::Capacity(format!(
            "dense eigensolve limited to dimension {DENSE_LIMIT}, operator has {}",
            op.dim()
        )));
    }
    let (values, columns) = match op.to_dense_real() {
        Some(m) => {
            let eig = SymmetricEigen::new(m);
            let cols: Vec<Vec<Complex64>> = (0..op.dim())
                .map(|k| eig.eigenvectors.column(k).iter().map(|&v| Complex64::new(v, 0.0)).collect())
                .collect();
            (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), cols)
        }
        None => {
            let eig = SymmetricEigen::new(op.to_dense());
            let cols: Vec<Vec<Complex64>> = (0..op.dim())
                .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
                .collect();
            (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), cols)
        }
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut sorted_values = Vec::with_capacity(order.len());
    let mut vectors = Vec::with_capacity(order.len());
    for k in order {
        sorted_values.push(values[k]);
        vectors.push(StateVector::normalized(columns[k].clone())?.canonical_phase());
    }
    Ok(Spectrum { values: sorted_values, vectors })
}

/// Lowest eigenpair.
pub fn ground_state(op: &HermitianOperator) -> Result<EigenSolution> {
    ground_state_with(op, EigenMethod::Auto)
}

pub fn ground_state_with(op: &HermitianOperator, method: EigenMethod) -> Result<EigenSolution> {
    let dense = match method {
        EigenMethod::Auto => op.dim() <= DENSE_LIMIT,
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
    };
    if dense {
        spectrum(op)?.solution(op, 0)
    } else {
        lanczos_ground_state(op)
    }
}

/// The `k`-th eigenpair in ascending order. Dense path only.
pub fn eigenstate_k(op: &HermitianOperator, k: usize) -> Result<EigenSolution> {
    if k >= op.dim() {
        return Err(Error::InvalidArgument(format!(
            "eigenstate index {k} out of range for dimension {}",
            op.dim()
        )));
    }
    spectrum(op)?.solution(op, k)
}

pub fn residual(op: &HermitianOperator, psi: &StateVector, eigenvalue: f64) -> Result<f64> {
    let hv = op.apply(psi.amplitudes())?;
    let r: Vec<Complex64> = hv
        .iter()
        .zip(psi.amplitudes())
        .map(|(h, v)| h - v * eigenvalue)
        .collect();
    Ok(l2_norm(&r))
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(y: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lanczos with full reorthogonalisation and explicit restarts from the
/// current Ritz vector.
fn lanczos_ground_state(op: &HermitianOperator) -> Result<EigenSolution> {
    let d = op.dim();
    let scale = op.norm_bound().max(1.0);
    let tol = LANCZOS_TOL * scale;

    let mut rng = StreamKey::new(0x01a2_c705).rng();
    let mut start: Vec<Complex64> = (0..d)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();

    let m_max = LANCZOS_BLOCK.min(d);
    let mut total_iterations = 0;
    let mut last_residual = f64::INFINITY;

    for _restart in 0..LANCZOS_RESTARTS {
        let n0 = l2_norm(&start);
        start.iter_mut().for_each(|v| *v /= n0);
        let mut basis: Vec<Vec<Complex64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut invariant = false;

        for j in 0..m_max {
            total_iterations += 1;
            let mut w = op.apply(&basis[j])?;
            let alpha = dot(&basis[j], &w).re;
            alphas.push(alpha);
            // Two passes of classical Gram-Schmidt against the whole basis.
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    axpy(&mut w, -c, q);
                }
            }
            let beta = l2_norm(&w);
            if j + 1 == m_max {
                break;
            }
            if beta <= 1e-14 * scale {
                invariant = true;
                break;
            }
            betas.push(beta);
            w.iter_mut().for_each(|v| *v /= beta);
            basis.push(w);
        }

        let m = alphas.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let theta0 = eig.eigenvalues[order[0]];
        let theta1 = order.get(1).map(|&i| eig.eigenvalues[i]);

        let coeffs = eig.eigenvectors.column(order[0]);
        let mut ritz = vec![Complex64::new(0.0, 0.0); d];
        for (i, q) in basis.iter().take(m).enumerate() {
            axpy(&mut ritz, Complex64::new(coeffs[i], 0.0), q);
        }
        let psi = StateVector::normalized(ritz)?.canonical_phase();
        let res = residual(op, &psi, theta0)?;
        last_residual = res;

        if res <= tol || invariant && res <= 1e3 * tol {
            let gap = theta1.map_or(f64::INFINITY, |t1| t1 - theta0);
            return Ok(EigenSolution {
                eigenvalue: theta0,
                eigenvector: psi,
                index: 0,
                gap_to_next: gap,
                degenerate: gap < DEGENERACY_GAP,
                residual: res,
            });
        }
        start = psi.into_amplitudes();
    }

    Err(Error::Solver {
        iterations: total_iterations,
        message: format!("Lanczos residual {last_residual:.3e} above tolerance {tol:.3e}"),
    })
}
