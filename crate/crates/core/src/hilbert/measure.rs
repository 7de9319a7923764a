use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::eigen::DENSE_LIMIT;
use super::operator::{HermitianOperator, Structure};
use super::state::StateVector;

/// Branches with Born probability at or below this are never selected.
pub const MIN_BRANCH_PROBABILITY: f64 = 1e-15;
/// Relative tolerance for grouping equal eigenvalues into one eigenspace.
pub const EIGENVALUE_GROUPING: f64 = 1e-9;

/// Bookkeeping for the random draw behind a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub uniform: f64,
    pub branch: usize,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub observable: String,
    pub outcome: f64,
    pub post_state: StateVector,
    pub draw: Draw,
}

/// In-place unnormalised Walsh-Hadamard transform.
pub fn fwht(v: &mut [Complex64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn hadamard(psi: &[Complex64]) -> Vec<Complex64> {
    let mut out = psi.to_vec();
    fwht(&mut out);
    let s = 1.0 / (psi.len() as f64).sqrt();
    out.iter_mut().for_each(|a| *a *= s);
    out
}

/// Assigns each value a level index, merging values within `tol` of the
/// previous member of a sorted run.
fn cluster_levels(values: &[f64], tol: f64) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut level = vec![0; values.len()];
    let mut reps: Vec<f64> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for &i in &order {
        if reps.is_empty() || values[i] - prev > tol {
            reps.push(0.0);
            members.push(0);
        }
        let l = reps.len() - 1;
        reps[l] += values[i];
        members[l] += 1;
        level[i] = l;
        prev = values[i];
    }
    for (r, m) in reps.iter_mut().zip(&members) {
        *r /= *m as f64;
    }
    (level, reps)
}

fn grouping_tol(op: &HermitianOperator) -> f64 {
    EIGENVALUE_GROUPING * op.norm_bound().max(1.0)
}

/// Joint eigenspaces of a commuting family.
#[derive(Debug, Clone)]
enum Basis {
    /// Eigenspaces are spans of computational basis states.
    Computational { group_of: Vec<usize> },
    /// Eigenspaces are spans of Hadamard-transformed basis states.
    Hadamard { group_of: Vec<usize> },
    /// Orthonormal column bases.
    Dense { subspaces: Vec<DMatrix<Complex64>> },
}

/// Simultaneous eigendecomposition of a set of mutually commuting
/// observables. Each group is a joint eigenspace with one outcome per
/// observable.
#[derive(Debug, Clone)]
pub struct JointDecomposition {
    labels: Vec<String>,
    outcomes: Vec<Vec<f64>>,
    basis: Basis,
    dim: usize,
}

impl JointDecomposition {
    pub fn new(ops: &[&HermitianOperator]) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty observable family".into()))?;
        let dim = first.dim();
        for op in ops {
            if op.dim() != dim {
                return Err(Error::Shape(format!("family mixes dimensions {dim} and {}", op.dim())));
            }
        }
        check_commuting(ops)?;
        let labels = ops.iter().map(|o| o.id()).collect();

        if ops.iter().all(|o| o.structure() == Structure::Diagonal) {
            let per_index: Vec<Vec<f64>> = ops.iter().map(|o| o.diagonal()).collect();
            let (group_of, outcomes) = group_by_levels(ops, &per_index, dim);
            return Ok(JointDecomposition { labels, outcomes, basis: Basis::Computational { group_of }, dim });
        }
        if ops.iter().all(|o| o.structure() == Structure::BitFlip) {
            let per_index: Vec<Vec<f64>> = ops
                .iter()
                .map(|o| {
                    let coeffs = o.bitflip_coefficients().expect("bit-flip structure");
                    (0..dim)
                        .map(|b| {
                            coeffs
                                .iter()
                                .map(|&(m, c)| if (m & b).count_ones() % 2 == 0 { c } else { -c })
                                .sum()
                        })
                        .collect()
                })
                .collect();
            let (group_of, outcomes) = group_by_levels(ops, &per_index, dim);
            return Ok(JointDecomposition { labels, outcomes, basis: Basis::Hadamard { group_of }, dim });
        }
        if dim > DENSE_LIMIT {
            return Err(Error::Capacity(format!(
                "generic observable measurement limited to dimension {DENSE_LIMIT}"
            )));
        }
        let (subspaces, outcomes) = refine(ops, dim);
        Ok(JointDecomposition { labels, outcomes, basis: Basis::Dense { subspaces }, dim })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_count(&self) -> usize {
        self.outcomes.len()
    }

    /// Joint outcome tuple of a group, one value per observable.
    pub fn outcomes(&self, group: usize) -> &[f64] {
        &self.outcomes[group]
    }

    /// Born probability of every joint eigenspace.
    pub fn probabilities(&self, psi: &StateVector) -> Result<Vec<f64>> {
        self.check_dim(psi)?;
        let mut p = vec![0.0; self.outcomes.len()];
        match &self.basis {
            Basis::Computational { group_of } => {
                for (a, &g) in psi.amplitudes().iter().zip(group_of) {
                    p[g] += a.norm_sqr();
                }
            }
            Basis::Hadamard { group_of } => {
                for (a, &g) in hadamard(psi.amplitudes()).iter().zip(group_of) {
                    p[g] += a.norm_sqr();
                }
            }
            Basis::Dense { subspaces } => {
                let v = DVector::from_column_slice(psi.amplitudes());
                for (g, b) in subspaces.iter().enumerate() {
                    p[g] = (b.adjoint() * &v).norm_squared();
                }
            }
        }
        Ok(p)
    }

    /// Normalised projection of `psi` onto a joint eigenspace.
    pub fn collapse(&self, psi: &StateVector, group: usize) -> Result<StateVector> {
        self.check_dim(psi)?;
        if group >= self.outcomes.len() {
            return Err(Error::InvalidArgument(format!("group {group} out of range")));
        }
        let zero = Complex64::new(0.0, 0.0);
        let projected = match &self.basis {
            Basis::Computational { group_of } => psi
                .amplitudes()
                .iter()
                .zip(group_of)
                .map(|(&a, &g)| if g == group { a } else { zero })
                .collect(),
            Basis::Hadamard { group_of } => {
                let mut h: Vec<Complex64> = hadamard(psi.amplitudes())
                    .into_iter()
                    .zip(group_of)
                    .map(|(a, &g)| if g == group { a } else { zero })
                    .collect();
                h = hadamard(&h);
                h
            }
            Basis::Dense { subspaces } => {
                let b = &subspaces[group];
                let v = DVector::from_column_slice(psi.amplitudes());
                (b * (b.adjoint() * v)).iter().copied().collect()
            }
        };
        StateVector::normalized(projected)
    }

    fn check_dim(&self, psi: &StateVector) -> Result<()> {
        if psi.dim() != self.dim {
            return Err(Error::Shape(format!(
                "state of dimension {} measured with observables of dimension {}",
                psi.dim(),
                self.dim
            )));
        }
        Ok(())
    }
}

fn group_by_levels(ops: &[&HermitianOperator], per_index: &[Vec<f64>], dim: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let leveled: Vec<(Vec<usize>, Vec<f64>)> = ops
        .iter()
        .zip(per_index)
        .map(|(o, vals)| cluster_levels(vals, grouping_tol(o)))
        .collect();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut outcomes = Vec::new();
    let mut group_of = Vec::with_capacity(dim);
    for i in 0..dim {
        let key: Vec<usize> = leveled.iter().map(|(lv, _)| lv[i]).collect();
        let next = outcomes.len();
        let g = *index.entry(key.clone()).or_insert(next);
        if g == next {
            outcomes.push(key.iter().zip(&leveled).map(|(&l, (_, reps))| reps[l]).collect());
        }
        group_of.push(g);
    }
    (group_of, outcomes)
}

/// Splits the space into joint eigenspaces by diagonalising each observable
/// in turn, restricted to the eigenspaces found so far.
fn refine(ops: &[&HermitianOperator], dim: usize) -> (Vec<DMatrix<Complex64>>, Vec<Vec<f64>>) {
    let mut spaces: Vec<(DMatrix<Complex64>, Vec<f64>)> = vec![(DMatrix::identity(dim, dim), Vec::new())];
    for op in ops {
        let a = op.to_dense();
        let tol = grouping_tol(op);
        let mut next = Vec::new();
        for (b, outs) in spaces {
            let restricted = b.adjoint() * &a * &b;
            let restricted = (&restricted + restricted.adjoint()).scale(0.5);
            let eig = SymmetricEigen::new(restricted);
            let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let (level, reps) = cluster_levels(&vals, tol);
            for (l, &rep) in reps.iter().enumerate() {
                let cols: Vec<usize> = (0..vals.len()).filter(|&i| level[i] == l).collect();
                let mut sub = DMatrix::<Complex64>::zeros(b.ncols(), cols.len());
                for (j, &c) in cols.iter().enumerate() {
                    sub.set_column(j, &eig.eigenvectors.column(c));
                }
                let mut o = outs.clone();
                o.push(rep);
                next.push((&b * sub, o));
            }
        }
        spaces = next;
    }
    spaces.into_iter().unzip()
}

pub fn check_commuting(ops: &[&HermitianOperator]) -> Result<()> {
    for (i, a) in ops.iter().enumerate() {
        for b in &ops[i + 1..] {
            if !a.commutes_with(b)? {
                return Err(Error::NonCommuting {
                    first: a.id(),
                    second: b.id(),
                    norm: a.commutator_norm(b)?,
                });
            }
        }
    }
    Ok(())
}

/// Born distribution of a commuting family in a fixed state, ready for
/// repeated sampling. Each sample models a fresh preparation of the state
/// followed by one joint measurement.
#[derive(Debug, Clone)]
pub struct FamilySampler {
    decomposition: JointDecomposition,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl FamilySampler {
    pub fn new(decomposition: JointDecomposition, psi: &StateVector) -> Result<Self> {
        let probabilities = decomposition.probabilities(psi)?;
        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for &p in &probabilities {
            if p > MIN_BRANCH_PROBABILITY {
                acc += p;
            }
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Domain("state has no weight on any eigenspace".into()));
        }
        Ok(FamilySampler { decomposition, probabilities, cumulative })
    }

    pub fn decomposition(&self) -> &JointDecomposition {
        &self.decomposition
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Draws a group index; returns it with the uniform variate used.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let total = *self.cumulative.last().expect("nonempty");
        let u: f64 = rng.random();
        let target = u * total;
        let mut g = self.cumulative.partition_point(|&c| c <= target);
        g = g.min(self.cumulative.len() - 1);
        // Skip suppressed branches that share the same cumulative value.
        while self.probabilities[g] <= MIN_BRANCH_PROBABILITY && g + 1 < self.cumulative.len() {
            g += 1;
        }
        (g, u)
    }

    /// Outcome tuple of one fresh shot.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[f64] {
        let (g, _) = self.draw(rng);
        self.decomposition.outcomes(g)
    }
}

/// Measures a single observable and collapses the state.
pub fn measure<R: Rng + ?Sized>(op: &HermitianOperator, psi: &StateVector, rng: &mut R) -> Result<MeasurementRecord> {
    Ok(measure_commuting_family(&[op], psi, rng)?.remove(0))
}

/// Measures a commuting family with one shared collapse. Every record carries
/// the same post-measurement state.
pub fn measure_commuting_family<R: Rng + ?Sized>(
    ops: &[&HermitianOperator],
    psi: &StateVector,
    rng: &mut R,
) -> Result<Vec<MeasurementRecord>> {
    let decomposition = JointDecomposition::new(ops)?;
    let sampler = FamilySampler::new(decomposition, psi)?;
    let (group, uniform) = sampler.draw(rng);
    let dec = sampler.decomposition();
    let post_state = dec.collapse(psi, group)?;
    let draw = Draw { uniform, branch: group, probability: sampler.probabilities()[group] };
    Ok(dec
        .labels()
        .iter()
        .zip(dec.outcomes(group))
        .map(|(label, &outcome)| MeasurementRecord {
            observable: label.clone(),
            outcome,
            post_state: post_state.clone(),
            draw,
        })
        .collect())
}

/// Exact Born distribution over joint outcome tuples, merging groups with
/// identical tuples.
pub fn outcome_distribution(ops: &[&HermitianOperator], psi: &StateVector) -> Result<Vec<(Vec<f64>, f64)>> {
    let dec = JointDecomposition::new(ops)?;
    let p = dec.probabilities(psi)?;
    Ok((0..dec.group_count()).map(|g| (dec.outcomes(g).to_vec(), p[g])).collect())
}
