//! Finite-dimensional quantum kernel.
//!
//! Spin systems use the convention that spin `k` is bit `k` of the basis
//! index, with spin up as bit 0.

pub mod eigen;
pub mod measure;
pub mod operator;
pub mod state;

pub use eigen::{
    eigenstate_k, ground_state, ground_state_with, spectrum, EigenMethod, EigenSolution, Spectrum,
    DEGENERACY_GAP, DENSE_LIMIT,
};
pub use measure::{
    measure, measure_commuting_family, outcome_distribution, Draw, FamilySampler, JointDecomposition,
    MeasurementRecord,
};
pub use operator::{pauli, HermitianOperator, Structure};
pub use state::StateVector;

/// `<psi|op|psi>`.
pub fn expectation(op: &HermitianOperator, psi: &StateVector) -> crate::Result<f64> {
    op.expectation(psi)
}
