use std::sync::OnceLock;

use npi_core::sort::{RewardMode, SortInterface};
use npi_core::teachers::Teacher;
use npi_core::vm::{
    ArgKind, Environment, Instruction, InstructionSchema, InstructionType, Observation, Outcome, StepResult,
    VmError,
};
use npi_core::Task;
use npi_neural::{Adam, Decode, MlpConfig, MlpPolicy, Policy, Term, ValueBaseline};
use npi_train::bc::{bc_gradient, bc_update, greedy_agreement, teacher_samples, train_bc, Sample};
use npi_train::config::TrainConfig;
use npi_train::pg::{compute_targets, pg_update, surrogate, PgHyper, PgOptimizer};
use npi_train::returns::nstep_returns;
use npi_train::rl::{train_rl, validate};
use npi_train::rollout::{collect_batch, Actor, TaskSource};
use npi_train::sweep::{grid, run_sweep, write_leaderboard};
use npi_train::verify::pg_surrogate_check;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct definition: discounted rewards until the episode ends, the
/// window closes or the segment runs out, plus the discounted value there.
fn returns_oracle(r: &[f64], v: &[f64], done: &[bool], gamma: f64, n: usize) -> Vec<f64> {
    (0..r.len())
        .map(|t| {
            let end = (t + n).min(r.len());
            match (t..end).find(|&k| done[k]) {
                Some(k) => (t..=k).map(|j| gamma.powi((j - t) as i32) * r[j]).sum(),
                None => {
                    (t..end).map(|j| gamma.powi((j - t) as i32) * r[j]).sum::<f64>()
                        + gamma.powi((end - t) as i32) * v[end]
                }
            }
        })
        .collect()
}

fn segment_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1usize..30).prop_flat_map(|len| {
        (
            prop::collection::vec(-2.0..2.0f64, len),
            prop::collection::vec(-5.0..5.0f64, len + 1),
            prop::collection::vec(prop::bool::weighted(0.2), len),
        )
    })
}

proptest! {
    #[test]
    fn returns_match_the_direct_definition((r, v, d) in segment_strategy(), gamma in 0.0..=1.0f64, n in 1usize..40) {
        let got = nstep_returns(&r, &v, &d, gamma, n);
        let want = returns_oracle(&r, &v, &d, gamma, n);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn steps_after_an_episode_end_do_not_leak_back(
        (r, v, d) in segment_strategy(),
        extra in prop::collection::vec(-3.0..3.0f64, 1..10),
        gamma in 0.0..=1.0f64,
        n in 1usize..40,
    ) {
        let mut d = d;
        *d.last_mut().unwrap() = true;
        let base = nstep_returns(&r, &v, &d, gamma, n);
        let mut r2 = r.clone();
        r2.extend(&extra);
        let mut v2 = v.clone();
        v2.extend(extra.iter().map(|x| 10.0 * x));
        let mut d2 = d.clone();
        d2.extend(std::iter::repeat(false).take(extra.len()));
        let padded = nstep_returns(&r2, &v2, &d2, gamma, n);
        prop_assert_eq!(&padded[..r.len()], &base[..]);
    }

    #[test]
    fn long_windows_give_full_discounted_returns((r, v, _d) in segment_strategy(), gamma in 0.0..=1.0f64) {
        let len = r.len();
        let got = nstep_returns(&r, &v, &vec![false; len], gamma, len + 5);
        let mut g = v[len];
        for t in (0..len).rev() {
            g = r[t] + gamma * g;
            prop_assert!((got[t] - g).abs() < 1e-9);
        }
    }
}

fn bubble_source(min: usize, max: usize) -> TaskSource {
    TaskSource {
        task: Task::sort(SortInterface::BubbleInsertion),
        min_size: min,
        max_size: max,
    }
}

fn small_mlp(schema: &'static InstructionSchema, width: usize, seed: u64) -> MlpPolicy {
    let cfg = MlpConfig {
        trunk_layers: 2,
        width: 16,
        head_hidden: 16,
    };
    MlpPolicy::new(schema, width, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let err = pg_surrogate_check(&mut ChaCha8Rng::seed_from_u64(seed)).expect("check runs");
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn without_auxiliary_terms_the_update_is_plain_policy_gradient() {
    let source = bubble_source(3, 6);
    let task = source.task;
    let mut pol = small_mlp(task.schema(), 68, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in pol.params_mut() {
        *p += rng.gen_range(-0.3..0.3);
    }
    let mut actors: Vec<Actor> = (0..3).map(|k| Actor::new(&source, k)).collect();
    let batch = collect_batch(&mut actors, &pol, &source, 20, 30, Some(Teacher::Insertion)).unwrap();
    let baseline = ValueBaseline::Scalar(0.25);
    let h = PgHyper {
        gamma: 0.95,
        n_steps: 5,
        entropy_weight: 0.0,
        baseline_weight: 0.0,
        imitation_weight: 0.0,
    };
    let targets = compute_targets(&baseline, &batch, h.gamma, h.n_steps).unwrap();
    let s = surrogate(&pol, &baseline, &batch, &targets, &h).unwrap();
    let steps = batch.steps() as f64;
    let mut want = vec![0.0; pol.params().len()];
    let mut loss = 0.0;
    for (k, seg) in batch.segments.iter().enumerate() {
        for t in 0..seg.len() {
            let a = targets.advantages[k][t];
            let term = Term {
                action: &seg.actions[t],
                log_prob_weight: -a / steps,
                entropy_weight: 0.0,
            };
            pol.accumulate(&seg.observations[t], &[term], &mut want).unwrap();
            loss -= a * pol.log_prob(&seg.observations[t], &seg.actions[t]).unwrap() / steps;
        }
    }
    for (g, w) in s.policy_grad.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
    }
    assert!(s.baseline_grad.iter().all(|&g| g == 0.0));
    assert!((s.loss - loss).abs() < 1e-9);
    assert_eq!(s.parts.imitation, 0.0);
}

#[test]
fn imitation_term_adds_the_teacher_log_likelihood_gradient() {
    let source = bubble_source(3, 5);
    let pol = small_mlp(source.task.schema(), 68, 5);
    let mut actors = vec![Actor::new(&source, 11)];
    let batch = collect_batch(&mut actors, &pol, &source, 15, 30, Some(Teacher::Bubble)).unwrap();
    let baseline = ValueBaseline::default();
    let zero = PgHyper {
        gamma: 0.9,
        n_steps: 4,
        entropy_weight: 0.0,
        baseline_weight: 0.0,
        imitation_weight: 0.0,
    };
    let with = PgHyper {
        imitation_weight: 0.5,
        ..zero
    };
    let targets = compute_targets(&baseline, &batch, zero.gamma, zero.n_steps).unwrap();
    let a = surrogate(&pol, &baseline, &batch, &targets, &zero).unwrap();
    let b = surrogate(&pol, &baseline, &batch, &targets, &with).unwrap();
    let seg = &batch.segments[0];
    let mut want = vec![0.0; pol.params().len()];
    for t in 0..seg.len() {
        let term = Term {
            action: &seg.teacher_actions[t],
            log_prob_weight: -0.5 / seg.len() as f64,
            entropy_weight: 0.0,
        };
        pol.accumulate(&seg.observations[t], &[term], &mut want).unwrap();
    }
    for k in 0..want.len() {
        let diff = b.policy_grad[k] - a.policy_grad[k];
        assert!((diff - want[k]).abs() < 1e-12, "{diff} vs {}", want[k]);
    }
    assert!(b.parts.imitation > 0.0);
}

/// One-step bandit whose arms pay 2, 1 and 0.
struct Bandit;

fn bandit_schema() -> &'static InstructionSchema {
    static S: OnceLock<InstructionSchema> = OnceLock::new();
    S.get_or_init(|| {
        InstructionSchema::new("bandit", vec![InstructionType::new("Pull", vec![ArgKind::Int(3)])]).unwrap()
    })
}

impl Environment for Bandit {
    fn schema(&self) -> &InstructionSchema {
        bandit_schema()
    }
    fn observe(&self) -> Observation {
        Observation::Vector(vec![1.0])
    }
    fn apply(&mut self, ins: &Instruction) -> Result<StepResult, VmError> {
        Ok(StepResult {
            reward: 2.0 - ins.args[0] as f64,
            terminal: Some(Outcome::Solved),
        })
    }
    fn is_solved(&self) -> bool {
        false
    }
    fn size(&self) -> usize {
        1
    }
    fn render(&self) -> String {
        "bandit".into()
    }
}

#[test]
fn policy_gradient_learns_the_best_bandit_arm() {
    let source = |_: &mut ChaCha8Rng| -> Box<dyn Environment + Send> { Box::new(Bandit) };
    let mut pol = small_mlp(bandit_schema(), 1, 3);
    let mut baseline = ValueBaseline::default();
    let mut opt = PgOptimizer::new(&pol, &baseline, 1e-2);
    let h = PgHyper {
        gamma: 0.99,
        n_steps: 5,
        entropy_weight: 0.0,
        baseline_weight: 0.5,
        imitation_weight: 0.0,
    };
    let mut actors: Vec<Actor> = (0..4).map(|k| Actor::new(&source, k)).collect();
    let obs = Observation::Vector(vec![1.0]);
    let best = Instruction::new(0, vec![0]);
    let mut solved_at = None;
    for u in 0..2000 {
        let batch = collect_batch(&mut actors, &pol, &source, 5, 10, None).unwrap();
        pg_update(&mut pol, &mut baseline, &mut opt, &batch, &h).unwrap();
        if pol.log_prob(&obs, &best).unwrap().exp() > 0.95 {
            solved_at = Some(u);
            break;
        }
    }
    assert!(solved_at.is_some(), "best arm probability stayed below 0.95");
    for _ in 0..300 {
        let batch = collect_batch(&mut actors, &pol, &source, 5, 10, None).unwrap();
        pg_update(&mut pol, &mut baseline, &mut opt, &batch, &h).unwrap();
    }
    assert!(pol.log_prob(&obs, &best).unwrap().exp() > 0.95);
    let ValueBaseline::Scalar(v) = baseline else { panic!("scalar baseline") };
    assert!(v > 1.5, "baseline {v} did not track the return");
}

fn bubble_samples(episodes: usize, seed: u64) -> Vec<Sample> {
    let source = bubble_source(3, 6);
    teacher_samples(&source, Teacher::Bubble, episodes, 100, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn full_batch_cloning_loss_decreases_every_step() {
    let samples = bubble_samples(8, 1);
    let mut pol = small_mlp(Task::sort(SortInterface::BubbleInsertion).schema(), 68, 1);
    let mut adam = Adam::new(pol.params().len(), 1e-3);
    let mut prev = f64::INFINITY;
    for step in 0..100 {
        let loss = bc_update(&mut pol, &mut adam, &samples).unwrap();
        assert!(loss < prev, "step {step}: {loss} >= {prev}");
        prev = loss;
    }
}

#[test]
fn self_generated_actions_give_entropy_loss_and_vanishing_gradient() {
    let schema = Task::sort(SortInterface::BubbleInsertion).schema();
    let mut pol = small_mlp(schema, 68, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in pol.params_mut() {
        *p += rng.gen_range(-0.4..0.4);
    }
    let obs = bubble_samples(1, 4).swap_remove(0).observation;
    let n = 40_000;
    let samples: Vec<Sample> = (0..n)
        .map(|_| Sample {
            observation: obs.clone(),
            action: pol.act(&obs, Decode::Sample, &mut rng).unwrap(),
        })
        .collect();
    let mut g = vec![0.0; pol.params().len()];
    let loss = bc_gradient(&pol, &samples, &mut g).unwrap();
    let entropy = pol
        .accumulate(&obs, &[Term { action: &samples[0].action, log_prob_weight: 0.0, entropy_weight: 0.0 }], &mut vec![0.0; g.len()])
        .unwrap()[0]
        .entropy;
    // Path entropy along one action is not the joint entropy, so compare
    // against the exact joint entropy by enumeration.
    let joint: f64 = schema
        .enumerate()
        .unwrap()
        .iter()
        .map(|a| {
            let lp = pol.log_prob(&obs, a).unwrap();
            -lp.exp() * lp
        })
        .sum();
    assert!(entropy > 0.0);
    assert!((loss - joint).abs() < 0.03 * joint, "loss {loss} vs entropy {joint}");
    // Typical per-parameter gradient of a single sample, for scale.
    let mut single = vec![0.0; g.len()];
    bc_gradient(&pol, &samples[..1], &mut single).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm(&g) < 0.05 * norm(&single), "{} vs {}", norm(&g), norm(&single));
}

#[test]
fn bubble_cloning_reaches_near_perfect_agreement() {
    let cfg = TrainConfig {
        teacher: Teacher::Bubble,
        min_size: 3,
        max_size: 8,
        episode_cap: 100,
        bc_epochs: 200,
        bc_episodes: 32,
        bc_batch: 128,
        bc_patience: 3,
        ..TrainConfig::default()
    };
    let mut pol = cfg.build_policy(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let report = train_bc(&mut pol, &cfg, None).unwrap();
    let held_out = {
        let source = bubble_source(3, 8);
        teacher_samples(&source, Teacher::Bubble, 200, 100, &mut ChaCha8Rng::seed_from_u64(99)).unwrap()
    };
    let agreement = greedy_agreement(&pol, &held_out).unwrap();
    assert!(agreement >= 0.999, "agreement {agreement} after {report:?}");
}

fn tiny_rl_config(seed: u64) -> TrainConfig {
    TrainConfig {
        min_size: 3,
        max_size: 4,
        episode_cap: 16,
        hidden_width: 16,
        head_hidden: 16,
        trunk_layers: 2,
        actors: 3,
        n_steps: 10,
        updates: 4,
        eval_every: 2,
        eval_episodes: 5,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bit_reproducible_across_thread_counts() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = tiny_rl_config(7);
            let mut pol = cfg.build_policy(&mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
            let report = train_rl(&mut pol, &cfg, None).unwrap();
            let bits: Vec<u64> = pol.params().iter().map(|x| x.to_bits()).collect();
            (bits, report)
        })
    };
    let (a, ra) = run(1);
    let (b, rb) = run(3);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(ra.validations.iter().map(|v| v.0).collect::<Vec<_>>(), vec![2, 4]);
    let (c, _) = run(1);
    assert_eq!(a, c);
}

#[test]
fn different_seeds_diverge() {
    let run = |seed| {
        let cfg = tiny_rl_config(seed);
        let mut pol = cfg.build_policy(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        train_rl(&mut pol, &cfg, None).unwrap();
        pol.params().to_vec()
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn sweep_ranks_every_seed_of_every_cell() {
    let base = TrainConfig {
        updates: 1,
        ..tiny_rl_config(0)
    };
    let points = grid(&[1e-4, 1e-5], &[0.99], &[0.0], &[10]);
    assert_eq!(points.len(), 2);
    let dir = std::env::temp_dir().join(format!("npi-sweep-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let rows = run_sweep(&base, &points, &[0, 1, 2, 3, 4], 2, None, Some(&dir)).unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    for w in rows.windows(2) {
        assert!(
            w[0].solve_rate > w[1].solve_rate
                || (w[0].solve_rate == w[1].solve_rate && w[0].mean_length <= w[1].mean_length)
        );
    }
    for cell in 0..2 {
        let in_cell: Vec<_> = rows.iter().filter(|r| r.cell == cell).collect();
        assert_eq!(in_cell.len(), 5);
        let saved: Vec<_> = in_cell.iter().filter(|r| r.checkpoint.is_some()).collect();
        assert_eq!(saved.len(), 1);
        let policy = npi_neural::AnyPolicy::load(saved[0].checkpoint.as_ref().unwrap()).unwrap();
        let cfg = TrainConfig { seed: saved[0].seed, ..base.clone() };
        let (v, _) = validate(&policy, &cfg).unwrap();
        assert_eq!(v.solve_rate, saved[0].solve_rate);
    }
    let mut out = Vec::new();
    write_leaderboard(&rows, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 11);
    assert!(run_sweep(&base, &[], &[0, 1], 2, None, None).unwrap().is_empty());
    std::fs::remove_dir_all(&dir).unwrap();
}

/// Slow: compares reward modes over a longer run.
#[test]
#[ignore]
fn shaping_speeds_up_early_learning() {
    let run = |reward| {
        let cfg = TrainConfig {
            reward,
            min_size: 3,
            max_size: 5,
            episode_cap: 25,
            updates: 300,
            eval_every: 0,
            eval_episodes: 50,
            actors: 8,
            imitation: false,
            ..TrainConfig::default()
        };
        let mut pol = cfg.build_policy(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        train_rl(&mut pol, &cfg, None).unwrap().last_validation().unwrap().solve_rate
    };
    let (sparse, shaping) = (run(RewardMode::Sparse), run(RewardMode::Shaping));
    println!("solve rate after 300 updates: sparse {sparse}, shaping {shaping}");
    assert!(shaping >= sparse);
}
