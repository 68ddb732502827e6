//! Behavior cloning on teacher traces regenerated every epoch.

use npi_core::teachers::Teacher;
use npi_core::vm::{Instruction, Observation};
use npi_neural::{Adam, Decode, Policy, Term};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::log::{emit, LogRow, TrainLog};
use crate::rollout::{EnvSource, TaskSource};
use crate::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: Observation,
    pub action: Instruction,
}

/// States visited by `teacher` on `episodes` fresh instances, paired with
/// its choices. Instances solved at reset contribute nothing.
pub fn teacher_samples(
    source: &dyn EnvSource,
    teacher: Teacher,
    episodes: usize,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>, TrainError> {
    let mut out = Vec::new();
    for _ in 0..episodes {
        let mut env = source.sample(rng);
        if env.is_solved() {
            continue;
        }
        for _ in 0..cap {
            let observation = env.observe();
            let action = teacher.decide(&observation);
            let res = env.apply(&action)?;
            out.push(Sample {
                observation,
                action,
            });
            if res.terminal.is_some() {
                break;
            }
        }
    }
    Ok(out)
}

const CHUNK: usize = 16;

/// Adds the gradient of the mean negative log-likelihood into `grads` and
/// returns that mean. Chunks are summed in a fixed order.
pub fn bc_gradient<P: Policy + ?Sized>(
    policy: &P,
    samples: &[Sample],
    grads: &mut [f64],
) -> Result<f64, TrainError> {
    let w = -1.0 / samples.len().max(1) as f64;
    let parts: Vec<(Vec<f64>, f64)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<_, TrainError> {
            let mut g = vec![0.0; grads.len()];
            let mut nll = 0.0;
            for s in chunk {
                let term = Term {
                    action: &s.action,
                    log_prob_weight: w,
                    entropy_weight: 0.0,
                };
                nll -= policy.accumulate(&s.observation, &[term], &mut g)?[0].log_prob;
            }
            Ok((g, nll))
        })
        .collect::<Result<_, _>>()?;
    let mut total = 0.0;
    for (g, nll) in parts {
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
        total += nll;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// One optimizer step on the mean negative log-likelihood of `samples`.
pub fn bc_update<P: Policy + ?Sized>(
    policy: &mut P,
    opt: &mut Adam,
    samples: &[Sample],
) -> Result<f64, TrainError> {
    let mut grads = vec![0.0; policy.params().len()];
    let loss = bc_gradient(&*policy, samples, &mut grads)?;
    opt.step(policy.params_mut(), &grads);
    Ok(loss)
}

/// Fraction of samples where greedy decoding reproduces the teacher.
pub fn greedy_agreement<P: Policy + ?Sized>(policy: &P, samples: &[Sample]) -> Result<f64, TrainError> {
    let hits = samples
        .par_iter()
        .map(|s| -> Result<usize, TrainError> {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let a = policy.act(&s.observation, Decode::Greedy, &mut rng)?;
            Ok(usize::from(a == s.action))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / samples.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    pub epochs: usize,
    pub updates: usize,
    pub samples: usize,
    /// Agreement on the last epoch's fresh traces, measured before training on them.
    pub final_agreement: f64,
    pub final_loss: f64,
    /// Agreement was perfect for `bc_patience` consecutive epochs.
    pub converged: bool,
}

/// Each epoch draws fresh teacher traces, scores greedy agreement on them
/// (unseen so far), then takes minibatch steps over them. Stops early
/// after `bc_patience` consecutive perfect epochs.
pub fn train_bc<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &TrainConfig,
    mut log: Option<&mut TrainLog>,
) -> Result<BcReport, TrainError> {
    let source = TaskSource {
        task: cfg.build_task(),
        min_size: cfg.min_size,
        max_size: cfg.max_size,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbc);
    let mut opt = Adam::new(policy.params().len(), cfg.bc_learning_rate);
    let mut report = BcReport {
        epochs: 0,
        updates: 0,
        samples: 0,
        final_agreement: 0.0,
        final_loss: f64::NAN,
        converged: false,
    };
    let mut streak = 0;
    for epoch in 0..cfg.bc_epochs {
        let mut samples = teacher_samples(&source, cfg.teacher, cfg.bc_episodes, cfg.episode_cap, &mut rng)?;
        let agreement = greedy_agreement(&*policy, &samples)?;
        streak = if agreement == 1.0 { streak + 1 } else { 0 };
        report.final_agreement = agreement;
        report.epochs = epoch + 1;
        if streak >= cfg.bc_patience.max(1) {
            report.converged = true;
            emit(
                &mut log,
                LogRow {
                    step: epoch,
                    phase: "bc",
                    loss: report.final_loss,
                    agreement: Some(agreement),
                    ..LogRow::default()
                },
            )?;
            break;
        }
        samples.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in samples.chunks(cfg.bc_batch) {
            loss_sum += bc_update(policy, &mut opt, batch)?;
            batches += 1;
        }
        report.updates += batches;
        report.samples += samples.len();
        report.final_loss = loss_sum / batches.max(1) as f64;
        emit(
            &mut log,
            LogRow {
                step: epoch,
                phase: "bc",
                loss: report.final_loss,
                agreement: Some(agreement),
                ..LogRow::default()
            },
        )?;
    }
    Ok(report)
}
