use crate::energy::{EnergyModel, Equilibrium};
use crate::error::{shape_check, Error, Result};

/// Scalar model with `E = (s - w)^2` and `C = (s - y)^2`, so that
/// `s*(w) = w` and the cost gradient is `2 (w - y)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticModel;

impl EnergyModel for QuadraticModel {
    fn weight_count(&self) -> usize {
        1
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn target_dim(&self) -> usize {
        1
    }
    fn weight_names(&self) -> Vec<String> {
        vec!["w".into()]
    }

    fn energy(&self, w: &[f64], _x: &[f64], s: &[f64]) -> Result<f64> {
        shape_check("state", 1, s.len())?;
        Ok((s[0] - w[0]).powi(2))
    }

    fn energy_weight_gradient(&self, w: &[f64], _x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        shape_check("state", 1, s.len())?;
        Ok(vec![-2.0 * (s[0] - w[0])])
    }

    fn cost(&self, s: &[f64], y: &[f64]) -> Result<f64> {
        shape_check("target", 1, y.len())?;
        Ok((s[0] - y[0]).powi(2))
    }

    fn cost_state_gradient(&self, s: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        shape_check("target", 1, y.len())?;
        Ok(vec![2.0 * (s[0] - y[0])])
    }

    fn equilibrate(&self, w: &[f64], _x: &[f64], y: &[f64], beta: f64, _warm: Option<&[f64]>) -> Result<Equilibrium> {
        shape_check("target", 1, y.len())?;
        if 1.0 + beta <= 0.0 {
            return Err(Error::Domain(format!("total energy unbounded below at beta = {beta}")));
        }
        Ok(Equilibrium {
            state: vec![(w[0] + beta * y[0]) / (1.0 + beta)],
            residual: 0.0,
            iterations: 0,
            degenerate: false,
            flagged: false,
        })
    }
}
