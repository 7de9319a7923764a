use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance on `| ||psi|| - 1 |` accepted by [`StateVector::new`].
pub const NORM_TOLERANCE: f64 = 1e-12;

/// A normalised pure state in a finite-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Wraps amplitudes that are already normalised.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Shape("state vector must have dimension >= 1".into()));
        }
        let norm = l2_norm(&amplitudes);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Domain(format!("state vector norm {norm} is not 1")));
        }
        Ok(StateVector { amplitudes })
    }

    /// Normalises arbitrary nonzero amplitudes.
    pub fn normalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm = l2_norm(&amplitudes);
        if amplitudes.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("cannot normalise a zero or non-finite vector".into()));
        }
        let inv = 1.0 / norm;
        for a in &mut amplitudes {
            *a *= inv;
        }
        Ok(StateVector { amplitudes })
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::normalized(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Computational basis state `|index>`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!("basis index {index} out of range for dimension {dim}")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(StateVector { amplitudes })
    }

    /// Equal superposition over all basis states.
    pub fn uniform(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("state vector must have dimension >= 1".into()));
        }
        let a = 1.0 / (dim as f64).sqrt();
        Ok(StateVector { amplitudes: vec![Complex64::new(a, 0.0); dim] })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "inner product of dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn overlap(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm())
    }

    /// Born probabilities in the computational basis.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Rotates the global phase so the largest-magnitude amplitude is real
    /// and positive. Ties go to the lowest index.
    pub fn canonical_phase(mut self) -> Self {
        let max = self.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
        if let Some(pivot) = self.amplitudes.iter().find(|a| a.norm() >= max * (1.0 - 1e-9)) {
            let phase = pivot.conj() / pivot.norm();
            for a in &mut self.amplitudes {
                *a *= phase;
            }
        }
        self
    }
}

pub(crate) fn l2_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rejects_unnormalised() {
        assert!(StateVector::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).is_err());
        assert!(StateVector::normalized(vec![c(0.0, 0.0)]).is_err());
        let s = StateVector::normalized(vec![c(3.0, 0.0), c(0.0, 4.0)]).unwrap();
        assert!((l2_norm(s.amplitudes()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn canonical_phase_makes_pivot_real_positive() {
        let s = StateVector::normalized(vec![c(0.0, -0.6), c(0.0, 0.8)])
            .unwrap()
            .canonical_phase();
        assert!((s.amplitudes()[1] - c(0.8, 0.0)).norm() < 1e-15);
        assert!((s.amplitudes()[0] - c(-0.6, 0.0)).norm() < 1e-15);

        let tie = StateVector::normalized(vec![c(-1.0, 0.0), c(1.0, 0.0)])
            .unwrap()
            .canonical_phase();
        assert!(tie.amplitudes()[0].re > 0.0);
    }

    #[test]
    fn inner_products() {
        let up = StateVector::basis(2, 0).unwrap();
        let plus = StateVector::uniform(2).unwrap();
        assert!((up.overlap(&plus).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(up.inner(&StateVector::basis(4, 0).unwrap()).is_err());
    }
}
