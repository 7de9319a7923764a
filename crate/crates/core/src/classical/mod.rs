//! Classical energy-based networks.

pub mod elastic;
pub mod ising;
pub mod quadratic;

pub use elastic::{ElasticNetwork, Spring};
pub use ising::{IsingModel, IsingSolver};
pub use quadratic::QuadraticModel;
