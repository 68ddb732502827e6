//! Central-difference gradient checks.

use npi_core::vm::Observation;

use crate::{NeuralError, Policy, Term};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub params: usize,
    /// Largest `|numeric - analytic| / max(|numeric|, |analytic|, floor)`.
    pub max_rel_error: f64,
}

/// Compares the analytic gradient of `terms` with central differences of
/// step `h` on every parameter.
pub fn check_policy<P: Policy + Clone>(
    policy: &P,
    obs: &Observation,
    terms: &[Term<'_>],
    h: f64,
    floor: f64,
) -> Result<GradCheck, NeuralError> {
    let objective = |p: &P| -> Result<f64, NeuralError> {
        let mut scratch = vec![0.0; p.params().len()];
        Ok(p.accumulate(obs, terms, &mut scratch)?
            .iter()
            .zip(terms)
            .map(|(s, t)| t.log_prob_weight * s.log_prob + t.entropy_weight * s.entropy)
            .sum())
    };
    let mut grads = vec![0.0; policy.params().len()];
    policy.accumulate(obs, terms, &mut grads)?;
    let numeric = |k: usize| -> Result<f64, NeuralError> {
        let mut q = policy.clone();
        q.params_mut()[k] += h;
        let up = objective(&q)?;
        q.params_mut()[k] -= 2.0 * h;
        Ok((up - objective(&q)?) / (2.0 * h))
    };
    Ok(GradCheck {
        params: grads.len(),
        max_rel_error: max_rel_error(&grads, numeric, floor)?,
    })
}

/// Worst relative error of `analytic` against `numeric(k)` over all `k`.
pub fn max_rel_error<E>(
    analytic: &[f64],
    mut numeric: impl FnMut(usize) -> Result<f64, E>,
    floor: f64,
) -> Result<f64, E> {
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let n = numeric(k)?;
        worst = worst.max((n - a).abs() / n.abs().max(a.abs()).max(floor));
    }
    Ok(worst)
}
