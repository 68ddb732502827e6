//! Self-check suites run by the `verify` command: encodings, call stack,
//! teachers against oracles, gradients, checkpoints and determinism.

use npi_core::bench::{evaluate, inversion_count, search_space_size};
use npi_core::knapsack::{knapsack_schema, KnapsackEnv, KnapsackInstance};
use npi_core::search::{search_schema, QueryMode};
use npi_core::sort::{
    bubble_insertion_schema, full_view_schema, quicksort_schema, observe_graph, SortInterface, SortState,
};
use npi_core::teachers::Teacher;
use npi_core::vm::{run_episode, ExecState, Instruction, Observation, Outcome};
use npi_core::{CapRule, Task};
use npi_neural::gradcheck::{check_policy, max_rel_error};
use npi_neural::{AnyPolicy, GnnConfig, GnnPolicy, MlpConfig, MlpPolicy, Policy, Term, ValueBaseline};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pg::{compute_targets, surrogate, PgHyper};
use crate::rollout::{collect_batch, Actor, TaskSource};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        SuiteResult {
            name,
            passed: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(what());
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

const GRAD_TOL: f64 = 1e-4;

pub fn run_all() -> Vec<SuiteResult> {
    vec![
        encoding(),
        call_stack(),
        teachers(),
        oracles(),
        gradients(),
        checkpoints(),
        determinism(),
    ]
}

fn encoding() -> SuiteResult {
    let mut r = SuiteResult::new("encoding");
    for s in [bubble_insertion_schema(), quicksort_schema(), search_schema(), knapsack_schema()] {
        let all = match s.enumerate() {
            Ok(a) => a,
            Err(e) => {
                r.failures.push(format!("{}: {e}", s.name()));
                continue;
            }
        };
        for ins in &all {
            let back = s
                .encode_prev_action(Some(ins))
                .and_then(|e| s.decode_prev_action(&e));
            r.check(matches!(&back, Ok(Some(b)) if b == ins), || format!("{}: {ins:?}", s.name()));
        }
    }
    r
}

fn call_stack() -> SuiteResult {
    let mut r = SuiteResult::new("call-stack");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..500 {
        let mut st = ExecState::new((0..4).map(|_| rng.gen_range(0..50)).collect(), 64);
        let before = st.vars.clone();
        let depth = rng.gen_range(1..6);
        let mut targets = Vec::new();
        for _ in 0..depth {
            let a: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
            let ins = Instruction::new(3, a.clone());
            if st.push_call(&ins, a[0], &[(a[1], a[3]), (a[2], a[4])], &[a[5]]).is_err() {
                r.failures.push(format!("trial {trial}: push failed"));
            }
            targets.push(a[5]);
            for v in st.vars.iter_mut() {
                *v = rng.gen_range(0..50);
            }
        }
        let mut ok = true;
        for _ in 0..depth {
            let src = rng.gen_range(0..4);
            ok &= st.pop_return(&[src]).is_ok();
        }
        let outer = targets[0];
        let restored = (0..4).filter(|&k| k != outer).all(|k| st.vars[k] == before[k]);
        r.check(ok && restored && st.depth() == 0, || format!("trial {trial}: state not restored"));
    }
    r
}

fn teachers() -> SuiteResult {
    let mut r = SuiteResult::new("teachers");
    let cases = [
        (Teacher::Bubble, Task::sort(SortInterface::BubbleInsertion), CapRule::Squared),
        (Teacher::Insertion, Task::sort(SortInterface::BubbleInsertion), CapRule::Squared),
        (Teacher::QuickSort, Task::sort(SortInterface::QuickSort), CapRule::TenSquared),
        (Teacher::Selection, Task::sort(SortInterface::FullView), CapRule::Squared),
        (Teacher::BinarySearch, Task::search(QueryMode::Dense), CapRule::PerSize(4)),
        (Teacher::LinearSearch, Task::search(QueryMode::Dense), CapRule::PerSize(4)),
    ];
    for (teacher, task, cap) in cases {
        match evaluate(teacher.name(), || teacher, &task, &[5, 10, 20, 50], 25, cap, 3) {
            Ok(rep) => {
                for row in &rep.rows {
                    r.check(row.solve_rate == 100.0, || {
                        format!("{teacher} solved {}% at n={}", row.solve_rate, row.size)
                    });
                }
            }
            Err(e) => r.failures.push(format!("{teacher}: {e}")),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..=10 {
        for _ in 0..5 {
            let inst = KnapsackInstance::random(n, &mut rng);
            let opt = inst.brute_force_optimum();
            let mut env = KnapsackEnv::new(inst);
            let ok = run_episode(&mut env, &mut Teacher::DfsKnapsack, usize::MAX, &mut rng)
                .map(|t| t.outcome == Outcome::Solved && env.state().best_value() == opt)
                .unwrap_or(false);
            r.check(ok, || format!("depth-first search missed the optimum at n={n}"));
        }
    }
    r
}

fn oracles() -> SuiteResult {
    let mut r = SuiteResult::new("oracles");
    let b = search_space_size(SortInterface::BubbleInsertion, 4);
    r.check(
        b.is_some_and(|s| s.actions == 28 && (s.states / 3.4828e10 - 1.0).abs() < 1e-4),
        || format!("bubble/insertion search space {b:?}"),
    );
    let q = search_space_size(SortInterface::QuickSort, 4);
    r.check(q.is_some_and(|s| s.actions == 2096), || format!("quick-sort search space {q:?}"));
    r.check(bubble_insertion_schema().action_count().ok() == Some(28), || "28 actions".into());
    r.check(quicksort_schema().action_count().ok() == Some(2096), || "2096 actions".into());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 20_000;
    let mean = (0..trials)
        .map(|_| inversion_count(SortState::random(10, &mut rng).array()) as f64)
        .sum::<f64>()
        / trials as f64;
    r.check((mean / 22.5 - 1.0).abs() < 0.02, || format!("mean inversions {mean} at n=10"));
    r
}

fn perturb<P: Policy>(p: &mut P, rng: &mut ChaCha8Rng) {
    for v in p.params_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
}

fn gradients() -> SuiteResult {
    let mut r = SuiteResult::new("gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let small = MlpConfig {
        trunk_layers: 3,
        width: 8,
        head_hidden: 8,
    };
    for (schema, width) in [(bubble_insertion_schema(), 68), (quicksort_schema(), 129)] {
        let Ok(mut pol) = MlpPolicy::new(schema, width, small, &mut rng) else {
            r.failures.push(format!("{}: construction failed", schema.name()));
            continue;
        };
        perturb(&mut pol, &mut rng);
        let obs = Observation::Vector((0..width).map(|_| f64::from(rng.gen_range(0u8..2))).collect());
        let all = schema.enumerate().unwrap_or_default();
        let a = &all[rng.gen_range(0..all.len())];
        let b = all.iter().max_by_key(|i| i.args.len()).unwrap_or(a);
        let terms = [
            Term { action: a, log_prob_weight: 0.8, entropy_weight: 0.3 },
            Term { action: b, log_prob_weight: -0.5, entropy_weight: 0.0 },
        ];
        let res = check_policy(&pol, &obs, &terms, 1e-6, 1e-4);
        r.check(matches!(res, Ok(c) if c.max_rel_error < GRAD_TOL), || {
            format!("{} policy gradient {res:?}", schema.name())
        });
    }
    let cfg = GnnConfig {
        rounds: 2,
        state: 4,
        embed_hidden: 5,
        edge_hidden: 5,
        message: 3,
        node_hidden: 5,
        pointer_hidden: 4,
    };
    match GnnPolicy::new(full_view_schema(), 1, cfg, &mut rng) {
        Ok(mut pol) => {
            perturb(&mut pol, &mut rng);
            let obs = Observation::Graph(observe_graph(&SortState::random(5, &mut rng)));
            let ins = Instruction::new(0, vec![2, 4]);
            let terms = [Term { action: &ins, log_prob_weight: 1.0, entropy_weight: 0.2 }];
            let res = check_policy(&pol, &obs, &terms, 1e-6, 1e-4);
            r.check(matches!(res, Ok(c) if c.max_rel_error < GRAD_TOL), || format!("graph policy gradient {res:?}"));
        }
        Err(e) => r.failures.push(format!("graph policy: {e}")),
    }
    r.check(pg_surrogate_check(&mut rng).is_some_and(|e| e < GRAD_TOL), || {
        "policy-gradient surrogate gradient".into()
    });
    r
}

/// Worst relative error of the surrogate gradient over policy and
/// baseline parameters, on a short imitation-enabled batch.
pub fn pg_surrogate_check(rng: &mut ChaCha8Rng) -> Option<f64> {
    let task = Task::sort(SortInterface::BubbleInsertion);
    let source = TaskSource { task, min_size: 4, max_size: 6 };
    let small = MlpConfig { trunk_layers: 2, width: 6, head_hidden: 6 };
    let mut pol = MlpPolicy::new(task.schema(), 68, small, rng).ok()?;
    perturb(&mut pol, rng);
    let mut baseline = ValueBaseline::linear(68);
    let bp: Vec<f64> = (0..69).map(|_| rng.gen_range(-0.1..0.1)).collect();
    baseline.set_params(&bp);
    let mut actors: Vec<Actor> = (0..2).map(|k| Actor::new(&source, 40 + k)).collect();
    let batch = collect_batch(&mut actors, &pol, &source, 6, 5, Some(Teacher::Insertion)).ok()?;
    let h = PgHyper {
        gamma: 0.9,
        n_steps: 3,
        entropy_weight: 0.05,
        baseline_weight: 0.3,
        imitation_weight: 0.2,
    };
    let targets = compute_targets(&baseline, &batch, h.gamma, h.n_steps).ok()?;
    let s = surrogate(&pol, &baseline, &batch, &targets, &h).ok()?;
    let eps = 1e-6;
    let policy_err = max_rel_error(
        &s.policy_grad,
        |k| {
            let mut q = pol.clone();
            q.params_mut()[k] += eps;
            let up = surrogate(&q, &baseline, &batch, &targets, &h)?.loss;
            q.params_mut()[k] -= 2.0 * eps;
            let down = surrogate(&q, &baseline, &batch, &targets, &h)?.loss;
            Ok::<_, crate::TrainError>((up - down) / (2.0 * eps))
        },
        1e-4,
    )
    .ok()?;
    let base_err = max_rel_error(
        &s.baseline_grad,
        |k| {
            let mut q = baseline.clone();
            let mut p = bp.clone();
            p[k] += eps;
            q.set_params(&p);
            let up = surrogate(&pol, &q, &batch, &targets, &h)?.loss;
            p[k] -= 2.0 * eps;
            q.set_params(&p);
            let down = surrogate(&pol, &q, &batch, &targets, &h)?.loss;
            Ok::<_, crate::TrainError>((up - down) / (2.0 * eps))
        },
        1e-4,
    )
    .ok()?;
    Some(policy_err.max(base_err))
}

fn checkpoints() -> SuiteResult {
    let mut r = SuiteResult::new("checkpoints");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut policies = Vec::new();
    if let Ok(mut p) = MlpPolicy::new(quicksort_schema(), 129, MlpConfig::default(), &mut rng) {
        perturb(&mut p, &mut rng);
        policies.push(AnyPolicy::Mlp(p));
    }
    if let Ok(mut p) = GnnPolicy::new(full_view_schema(), 1, GnnConfig::default(), &mut rng) {
        perturb(&mut p, &mut rng);
        policies.push(AnyPolicy::Gnn(p));
    }
    r.check(policies.len() == 2, || "policy construction failed".into());
    for p in &policies {
        let mut buf = Vec::new();
        let ok = p.to_checkpoint().write(&mut buf).is_ok()
            && npi_neural::Checkpoint::read(&buf[..])
                .and_then(|ck| AnyPolicy::from_checkpoint(&ck))
                .is_ok_and(|back| {
                    back.params().iter().map(|x| x.to_bits()).eq(p.params().iter().map(|x| x.to_bits()))
                });
        r.check(ok, || format!("{} checkpoint round trip", p.schema().name()));
    }
    r
}

fn determinism() -> SuiteResult {
    let mut r = SuiteResult::new("determinism");
    for teacher in Teacher::ALL {
        let task = match teacher.sort_interface() {
            Some(i) => Task::sort(i),
            None if teacher == Teacher::DfsKnapsack => Task::Knapsack,
            None => Task::search(QueryMode::Dense),
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut env = task.make_env(9, &mut rng);
            let mut t = teacher;
            run_episode(env.as_mut(), &mut t, 1000, &mut rng).ok()
        };
        let (a, b) = (run(), run());
        r.check(a.is_some() && a == b, || format!("{teacher} episode differs between runs"));
    }
    let task = Task::sort(SortInterface::QuickSort);
    let rep = || evaluate("q", || Teacher::QuickSort, &task, &[6, 9], 10, CapRule::TenSquared, 5).ok();
    let (a, b) = (rep(), rep());
    r.check(a.is_some() && a == b, || "evaluation report differs between runs".into());
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for s in run_all() {
            assert!(s.ok(), "{}: {:?}", s.name, s.failures);
            assert!(s.passed > 0, "{} checked nothing", s.name);
        }
    }
}
