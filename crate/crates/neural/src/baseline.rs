//! State-value estimate used as the policy-gradient baseline.

use npi_core::vm::Observation;

use crate::NeuralError;

/// Either one learned scalar (ignores the state) or a linear function of a
/// vector observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueBaseline {
    Scalar(f64),
    Linear { weights: Vec<f64>, bias: f64 },
}

impl Default for ValueBaseline {
    fn default() -> Self {
        ValueBaseline::Scalar(0.0)
    }
}

impl ValueBaseline {
    pub fn linear(width: usize) -> Self {
        ValueBaseline::Linear {
            weights: vec![0.0; width],
            bias: 0.0,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ValueBaseline::Scalar(_) => 1,
            ValueBaseline::Linear { weights, .. } => weights.len() + 1,
        }
    }

    pub fn value(&self, obs: &Observation) -> Result<f64, NeuralError> {
        match self {
            ValueBaseline::Scalar(v) => Ok(*v),
            ValueBaseline::Linear { weights, bias } => {
                let x = self.input(obs, weights.len())?;
                Ok(bias + weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            }
        }
    }

    fn input<'o>(&self, obs: &'o Observation, width: usize) -> Result<&'o [f64], NeuralError> {
        obs.as_vector()
            .filter(|v| v.len() == width)
            .ok_or_else(|| NeuralError::Shape {
                expected: format!("vector of width {width}"),
                got: "other".into(),
            })
    }

    /// Adds `coef * dV/dphi` into `grads` (laid out as [`Self::params`]).
    pub fn accumulate(&self, obs: &Observation, coef: f64, grads: &mut [f64]) -> Result<(), NeuralError> {
        match self {
            ValueBaseline::Scalar(_) => grads[0] += coef,
            ValueBaseline::Linear { weights, .. } => {
                let x = self.input(obs, weights.len())?;
                for (g, x) in grads.iter_mut().zip(x) {
                    *g += coef * x;
                }
                grads[weights.len()] += coef;
            }
        }
        Ok(())
    }

    /// Flat parameters: weights then bias, or the scalar.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ValueBaseline::Scalar(v) => vec![*v],
            ValueBaseline::Linear { weights, bias } => {
                let mut p = weights.clone();
                p.push(*bias);
                p
            }
        }
    }

    pub fn set_params(&mut self, p: &[f64]) {
        match self {
            ValueBaseline::Scalar(v) => *v = p[0],
            ValueBaseline::Linear { weights, bias } => {
                let n = weights.len();
                weights.copy_from_slice(&p[..n]);
                *bias = p[n];
            }
        }
    }
}
