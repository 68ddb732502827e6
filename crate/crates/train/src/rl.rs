//! Policy-gradient training loop and greedy validation.

use npi_core::bench::{evaluate, EvalReport};
use npi_core::CapRule;
use npi_neural::{Policy, PolicyAgent, ValueBaseline};

use crate::config::TrainConfig;
use crate::log::{emit, LogRow, TrainLog};
use crate::pg::{pg_update, PgHyper, PgOptimizer};
use crate::rollout::{collect_batch, Actor, TaskSource};
use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub solve_rate: f64,
    pub mean_length: f64,
}

/// Smallest, middle and largest training size.
pub fn validation_sizes(cfg: &TrainConfig) -> Vec<usize> {
    let mut s = vec![cfg.min_size, (cfg.min_size + cfg.max_size) / 2, cfg.max_size];
    s.dedup();
    s
}

const VALIDATION_SEED: u64 = 0x5eed_0f_7a11;

/// Greedy evaluation on held-out instances across the training range.
pub fn validate<P: Policy + ?Sized>(policy: &P, cfg: &TrainConfig) -> Result<(Validation, EvalReport), TrainError> {
    let report = evaluate(
        "policy",
        || PolicyAgent::greedy(policy),
        &cfg.build_task(),
        &validation_sizes(cfg),
        cfg.eval_episodes,
        CapRule::Absolute(cfg.episode_cap),
        VALIDATION_SEED ^ cfg.seed,
    )?;
    let rows = &report.rows;
    let k = rows.len().max(1) as f64;
    let v = Validation {
        solve_rate: rows.iter().map(|r| r.solve_rate).sum::<f64>() / k,
        mean_length: rows.iter().map(|r| r.mean_length).sum::<f64>() / k,
    };
    Ok((v, report))
}

pub fn hyper(cfg: &TrainConfig) -> PgHyper {
    PgHyper {
        gamma: cfg.gamma,
        n_steps: cfg.n_steps,
        entropy_weight: cfg.entropy_weight,
        baseline_weight: cfg.baseline_weight,
        imitation_weight: if cfg.imitation { cfg.imitation_weight } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlReport {
    pub updates: usize,
    pub baseline: ValueBaseline,
    /// `(update, validation)` at every evaluation point.
    pub validations: Vec<(usize, Validation)>,
}

impl RlReport {
    pub fn last_validation(&self) -> Option<Validation> {
        self.validations.last().map(|v| v.1)
    }
}

fn actor_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (k as u64).wrapping_add(1).wrapping_mul(0xd1b5_4a32_d192_ed03)
}

/// Runs `cfg.updates` policy-gradient steps, validating every
/// `cfg.eval_every` updates and after the last.
pub fn train_rl<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &TrainConfig,
    mut log: Option<&mut TrainLog>,
) -> Result<RlReport, TrainError> {
    let source = TaskSource {
        task: cfg.build_task(),
        min_size: cfg.min_size,
        max_size: cfg.max_size,
    };
    let mut baseline = cfg.build_baseline();
    let mut opt = PgOptimizer::new(&*policy, &baseline, cfg.learning_rate);
    let mut actors: Vec<Actor> = (0..cfg.actors).map(|k| Actor::new(&source, actor_seed(cfg.seed, k))).collect();
    let teacher = cfg.imitation.then_some(cfg.teacher);
    let h = hyper(cfg);
    let mut report = RlReport {
        updates: 0,
        baseline: baseline.clone(),
        validations: Vec::new(),
    };
    for u in 0..cfg.updates {
        let batch = collect_batch(&mut actors, &*policy, &source, cfg.n_steps, cfg.episode_cap, teacher)?;
        let d = pg_update(policy, &mut baseline, &mut opt, &batch, &h)?;
        let last = u + 1 == cfg.updates;
        let due = cfg.eval_every > 0 && (u + 1) % cfg.eval_every == 0;
        let val = if due || last {
            let (v, _) = validate(&*policy, cfg)?;
            report.validations.push((u + 1, v));
            Some(v)
        } else {
            None
        };
        emit(
            &mut log,
            LogRow {
                step: u + 1,
                phase: "rl",
                loss: d.loss,
                policy_loss: Some(d.parts.policy),
                value_loss: Some(d.parts.value),
                entropy: Some(d.parts.entropy),
                imitation_loss: teacher.map(|_| d.parts.imitation),
                agreement: d.agreement,
                mean_return: d.mean_return,
                solve_rate: val.map(|v| v.solve_rate).or(d.solve_rate),
                mean_length: val.map(|v| v.mean_length).or(d.mean_length),
            },
        )?;
        report.updates = u + 1;
    }
    report.baseline = baseline;
    Ok(report)
}

/// Greedy policy against the configured teacher on the same instances.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TeacherComparison {
    pub size: usize,
    pub policy_solve_rate: f64,
    pub policy_mean_length: f64,
    pub teacher_solve_rate: f64,
    pub teacher_mean_length: f64,
    /// Policy length over teacher length; below 1 means shorter programs.
    pub length_ratio: f64,
}

pub fn compare_with_teacher<P: Policy + ?Sized>(
    policy: &P,
    cfg: &TrainConfig,
    sizes: &[usize],
    episodes: usize,
    cap: CapRule,
    seed: u64,
) -> Result<Vec<TeacherComparison>, TrainError> {
    let task = cfg.build_task();
    let ours = evaluate("policy", || PolicyAgent::greedy(policy), &task, sizes, episodes, cap, seed)?;
    let theirs = evaluate(cfg.teacher.name(), || cfg.teacher, &task, sizes, episodes, cap, seed)?;
    Ok(ours
        .rows
        .iter()
        .zip(&theirs.rows)
        .map(|(p, t)| TeacherComparison {
            size: p.size,
            policy_solve_rate: p.solve_rate,
            policy_mean_length: p.mean_length,
            teacher_solve_rate: t.solve_rate,
            teacher_mean_length: t.mean_length,
            length_ratio: p.mean_length / t.mean_length,
        })
        .collect())
}
