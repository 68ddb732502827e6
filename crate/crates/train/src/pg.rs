//! n-step policy gradient with a learned baseline, an entropy bonus and
//! an auxiliary imitation term.
//!
//! Per visited state the minimized surrogate is
//! `-(G - V) log p(a) + mu (G - V)^2 - beta H - lambda log p(a_teacher)`,
//! averaged over all steps of the batch. `G` and the advantage are
//! treated as constants.

use npi_neural::{Adam, Policy, Term, ValueBaseline};
use rayon::prelude::*;

use crate::returns::nstep_returns;
use crate::rollout::RolloutBatch;
use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgHyper {
    pub gamma: f64,
    pub n_steps: usize,
    pub entropy_weight: f64,
    pub baseline_weight: f64,
    /// Zero disables the imitation term.
    pub imitation_weight: f64,
}

/// Returns and advantages per segment, fixed before differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub returns: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
}

pub fn compute_targets(
    baseline: &ValueBaseline,
    batch: &RolloutBatch,
    gamma: f64,
    n: usize,
) -> Result<Targets, TrainError> {
    let mut returns = Vec::with_capacity(batch.segments.len());
    let mut advantages = Vec::with_capacity(batch.segments.len());
    for seg in &batch.segments {
        let mut values = seg
            .observations
            .iter()
            .map(|o| baseline.value(o))
            .collect::<Result<Vec<_>, _>>()?;
        values.push(match &seg.bootstrap {
            Some(o) => baseline.value(o)?,
            None => 0.0,
        });
        let g = nstep_returns(&seg.rewards, &values, &seg.done, gamma, n);
        advantages.push(g.iter().zip(&values).map(|(g, v)| g - v).collect());
        returns.push(g);
    }
    Ok(Targets {
        returns,
        advantages,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub imitation: f64,
    /// Steps where the taken action equals the teacher's.
    pub agreements: usize,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.imitation += o.imitation;
        self.agreements += o.agreements;
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub loss: f64,
    /// Means per step.
    pub parts: LossParts,
    pub policy_grad: Vec<f64>,
    pub baseline_grad: Vec<f64>,
}

/// Loss and its gradient for fixed targets.
pub fn surrogate<P: Policy + ?Sized>(
    policy: &P,
    baseline: &ValueBaseline,
    batch: &RolloutBatch,
    targets: &Targets,
    h: &PgHyper,
) -> Result<Surrogate, TrainError> {
    let total = batch.steps();
    let inv = 1.0 / total.max(1) as f64;
    let per_segment: Vec<(Vec<f64>, Vec<f64>, LossParts)> = batch
        .segments
        .par_iter()
        .zip(&targets.returns)
        .zip(&targets.advantages)
        .map(|((seg, ret), adv)| -> Result<_, TrainError> {
            let mut pg = vec![0.0; policy.params().len()];
            let mut bg = vec![0.0; baseline.param_count()];
            let mut parts = LossParts::default();
            let imitate = h.imitation_weight != 0.0 && !seg.teacher_actions.is_empty();
            for t in 0..seg.len() {
                let obs = &seg.observations[t];
                let mut terms = vec![Term {
                    action: &seg.actions[t],
                    log_prob_weight: -adv[t] * inv,
                    entropy_weight: -h.entropy_weight * inv,
                }];
                if imitate {
                    terms.push(Term {
                        action: &seg.teacher_actions[t],
                        log_prob_weight: -h.imitation_weight * inv,
                        entropy_weight: 0.0,
                    });
                }
                let stats = policy.accumulate(obs, &terms, &mut pg)?;
                let v = baseline.value(obs)?;
                let err = ret[t] - v;
                baseline.accumulate(obs, -2.0 * h.baseline_weight * err * inv, &mut bg)?;
                parts.policy -= adv[t] * stats[0].log_prob;
                parts.value += err * err;
                parts.entropy += stats[0].entropy;
                if imitate {
                    parts.imitation -= stats[1].log_prob;
                    parts.agreements += usize::from(seg.actions[t] == seg.teacher_actions[t]);
                }
            }
            Ok((pg, bg, parts))
        })
        .collect::<Result<_, _>>()?;
    let mut policy_grad = vec![0.0; policy.params().len()];
    let mut baseline_grad = vec![0.0; baseline.param_count()];
    let mut sums = LossParts::default();
    for (pg, bg, parts) in &per_segment {
        for (a, b) in policy_grad.iter_mut().zip(pg) {
            *a += b;
        }
        for (a, b) in baseline_grad.iter_mut().zip(bg) {
            *a += b;
        }
        sums.add(parts);
    }
    let parts = LossParts {
        policy: sums.policy * inv,
        value: sums.value * inv,
        entropy: sums.entropy * inv,
        imitation: sums.imitation * inv,
        agreements: sums.agreements,
    };
    let loss = parts.policy + h.baseline_weight * parts.value - h.entropy_weight * parts.entropy
        + h.imitation_weight * parts.imitation;
    Ok(Surrogate {
        loss,
        parts,
        policy_grad,
        baseline_grad,
    })
}

/// Adam states for the policy and the baseline.
#[derive(Debug, Clone)]
pub struct PgOptimizer {
    pub policy: Adam,
    pub baseline: Adam,
}

impl PgOptimizer {
    pub fn new<P: Policy + ?Sized>(policy: &P, baseline: &ValueBaseline, lr: f64) -> Self {
        PgOptimizer {
            policy: Adam::new(policy.params().len(), lr),
            baseline: Adam::new(baseline.param_count(), lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgDiagnostics {
    pub loss: f64,
    pub parts: LossParts,
    pub steps: usize,
    /// Fraction of steps whose action matched the teacher; `None` without imitation.
    pub agreement: Option<f64>,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub solve_rate: Option<f64>,
    pub mean_length: Option<f64>,
}

/// One optimizer step on `batch`, collected from the current `policy`.
pub fn pg_update<P: Policy + ?Sized>(
    policy: &mut P,
    baseline: &mut ValueBaseline,
    opt: &mut PgOptimizer,
    batch: &RolloutBatch,
    h: &PgHyper,
) -> Result<PgDiagnostics, TrainError> {
    let targets = compute_targets(baseline, batch, h.gamma, h.n_steps)?;
    let s = surrogate(&*policy, baseline, batch, &targets, h)?;
    opt.policy.step(policy.params_mut(), &s.policy_grad);
    let mut bp = baseline.params();
    opt.baseline.step(&mut bp, &s.baseline_grad);
    baseline.set_params(&bp);
    let steps = batch.steps();
    let imitating = h.imitation_weight != 0.0
        && batch.segments.iter().any(|seg| !seg.teacher_actions.is_empty());
    let eps = &batch.episodes;
    let mean = |f: &dyn Fn(&crate::rollout::EpisodeStat) -> f64| {
        (!eps.is_empty()).then(|| eps.iter().map(f).sum::<f64>() / eps.len() as f64)
    };
    Ok(PgDiagnostics {
        loss: s.loss,
        parts: s.parts,
        steps,
        agreement: imitating.then(|| s.parts.agreements as f64 / steps.max(1) as f64),
        episodes: eps.len(),
        mean_return: mean(&|e| e.total_reward),
        solve_rate: mean(&|e| if e.solved { 100.0 } else { 0.0 }),
        mean_length: mean(&|e| e.length as f64),
    })
}
