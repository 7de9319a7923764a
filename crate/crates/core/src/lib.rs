//! Equilibrium propagation for classical energy-based networks and its
//! quantum counterpart, where the equilibrium is an eigenstate of a
//! parameterised Hamiltonian.
//!
//! The crate is organised bottom-up:
//!
//! - [`energy`]: the abstract energy-model interface, nudged total energy,
//!   contrastive gradient estimators and a finite-difference oracle.
//! - [`classical`]: Ising spin networks and elastic spring networks.
//! - [`hilbert`]: state vectors, sparse Hermitian operators, eigensolvers and
//!   Born-rule measurement with collapse.
//! - [`tfim`]: the transverse-field Ising Hamiltonian and its observables.
//! - [`qho`]: coupled quantum harmonic oscillators with Gaussian ground states.
//! - [`qep`]: the measurement-based quantum estimator and training loop.
//!
//! Data-parallel loops go through [`par`]; with the default `parallel`
//! feature they run on rayon, otherwise sequentially. Results are identical
//! either way because every random draw comes from a keyed stream
//! ([`rng::StreamKey`]).

pub mod classical;
pub mod energy;
pub mod error;
pub mod hilbert;
pub mod par;
pub mod qep;
pub mod qho;
pub mod rng;
pub mod tfim;

pub use error::{Error, Result};
