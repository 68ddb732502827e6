use npi_core::bench::inversion_count;
use npi_core::sort::{
    assign_var, function_call, move_var, observe_bubble_insertion, observe_graph,
    observe_quicksort, orderedness, pointer_swap, ret, swap, swap_with_next, RewardConfig,
    RewardMode, SortEnv, SortInterface, SortState,
};
use npi_core::vm::{Environment, Instruction, Observation, Outcome};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Straight transcription of the interface tables.
fn oracle_features(a: &[i64], low: usize, high: usize, v: &[usize]) -> Vec<f64> {
    let k = v.len();
    let mut out = vec![];
    for i in 0..k {
        for j in 0..k {
            if i < j {
                out.extend([
                    ind(v[i] < v[j]),
                    ind(v[i] == v[j]),
                    ind(v[i] > v[j]),
                    ind(a[v[i]] < a[v[j]]),
                    ind(a[v[i]] == a[v[j]]),
                    ind(a[v[i]] > a[v[j]]),
                ]);
            }
        }
    }
    for &p in v {
        let below = (p as i64) - 1 < low as i64;
        let left = if below {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            [0.0, ind(a[p] > a[p - 1]), ind(a[p] == a[p - 1]), ind(a[p] < a[p - 1])]
        };
        let above = p + 1 > high;
        let right = if above {
            [0.0, 0.0, 0.0, 1.0]
        } else {
            [ind(a[p] > a[p + 1]), ind(a[p] == a[p + 1]), ind(a[p] < a[p + 1]), 0.0]
        };
        out.extend(left);
        out.extend(right);
    }
    out
}

#[test]
fn two_element_observation_matches_table_oracle() {
    let mut st = SortState::new(vec![1, 0], 0, 1).unwrap();
    st.set_vars([0, 1, 0, 1]).unwrap();
    let f = observe_bubble_insertion(&st);
    assert_eq!(f, oracle_features(&[1, 0], 0, 1, &[0, 1, 0, 1]));
    // pair (v1, v2): v1 < v2 and A[v1] > A[v2]
    assert_eq!(&f[0..6], &[1., 0., 0., 0., 0., 1.]);
    // v1 at low: boundary left, right neighbour smaller
    assert_eq!(&f[36..44], &[1., 0., 0., 0., 1., 0., 0., 0.]);
}

#[test]
fn observation_matches_oracle_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    use rand::Rng;
    for _ in 0..2000 {
        let n = rng.gen_range(1..9);
        let a: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let low = rng.gen_range(0..n);
        let high = rng.gen_range(low..n);
        let mut st = SortState::new(a.clone(), low, high).unwrap();
        let v = [0; 4].map(|_| rng.gen_range(low..=high));
        st.set_vars(v).unwrap();
        assert_eq!(observe_bubble_insertion(&st), oracle_features(&a, low, high, &v));
    }
}

#[test]
fn reset_quicksort_observation() {
    let st = SortState::new(vec![3, 0, 2, 1], 0, 3).unwrap();
    let f = observe_quicksort(&st);
    assert_eq!(f.len(), 129);
    assert_eq!(&f[68..71], &[1.0, 0.0, 0.0]);
    assert_eq!(f[128], 1.0);
    assert_eq!(f[71..128].iter().sum::<f64>(), 0.0);
}

#[test]
fn call_stack_snapshot_and_return() {
    // variables a=2, b=3, c=1, d=2 inside function B (id 1)
    let mut env = SortEnv::new(
        SortInterface::QuickSort,
        SortState::new(vec![5, 4, 3, 2, 1, 0], 0, 5).unwrap(),
        RewardConfig::default(),
    );
    env.apply(&function_call(1, [0, 1], [0, 1], 0)).unwrap();
    env.state_mut().set_vars([2, 3, 1, 2]).unwrap();
    let call = function_call(0, [2, 3], [2, 3], 0);
    env.apply(&call).unwrap();
    let st = env.state();
    let top = st.exec.stack.last().unwrap();
    assert_eq!(top.caller_function, Some(1));
    assert_eq!(top.caller_prev_action.as_ref(), Some(&call));
    assert_eq!(top.saved_variables, vec![2, 3, 1, 2]);
    assert_eq!(top.return_targets, vec![0]);
    assert_eq!(st.exec.function_id, Some(0));
    assert_eq!(st.exec.prev_action, None);
    let frame = env.render();
    assert!(frame.contains("prev:FuncB in:FuncA (a=2,b=3,c=1,d=2) ret->a"), "{frame}");

    // local i (variable 0) reaches 5, then Return(i)
    env.state_mut().set_vars([5, 3, 1, 2]).unwrap();
    env.apply(&ret(0)).unwrap();
    let st = env.state();
    assert_eq!(st.vars(), &[5, 3, 1, 2]);
    assert_eq!(st.exec.function_id, Some(1));
    assert_eq!(st.exec.prev_action.as_ref(), Some(&call));
}

#[test]
fn return_right_after_call_passes_value_through() {
    let mut env = SortEnv::new(
        SortInterface::QuickSort,
        SortState::new(vec![3, 1, 2, 0], 0, 3).unwrap(),
        RewardConfig::default(),
    );
    env.state_mut().set_vars([0, 1, 2, 3]).unwrap();
    env.apply(&function_call(0, [0, 1], [3, 2], 2)).unwrap();
    assert_eq!(env.state().vars(), &[3, 2, 2, 3]);
    env.apply(&ret(0)).unwrap();
    assert_eq!(env.state().vars(), &[0, 1, 3, 3]);
}

#[test]
fn runaway_recursion_exhausts_budget() {
    let mut env = SortEnv::new(
        SortInterface::QuickSort,
        SortState::new(vec![1, 0], 0, 1).unwrap(),
        RewardConfig::default(),
    );
    let call = function_call(0, [2, 3], [2, 3], 3);
    let limit = 2 * 2 + 64;
    for _ in 0..limit {
        assert_eq!(env.apply(&call).unwrap().terminal, None);
    }
    assert_eq!(
        env.apply(&call).unwrap().terminal,
        Some(Outcome::BudgetExhausted)
    );
}

#[test]
fn uniform_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 120_000;
    let mut counts = std::collections::HashMap::new();
    for _ in 0..draws {
        let st = SortState::random(5, &mut rng);
        *counts.entry(st.array().to_vec()).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 120);
    let expected = draws as f64 / 120.0;
    let sigma = (expected * (1.0 - 1.0 / 120.0)).sqrt();
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    for &c in counts.values() {
        assert!((c as f64 - expected).abs() < 4.0 * sigma);
    }
    // 119 degrees of freedom; 99.9th percentile is about 169
    assert!(chi2 < 169.0, "chi2 {chi2}");
}

#[test]
fn mean_inversions_match_quarter_n_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [8usize, 10, 16] {
        let draws = 10_000;
        let total: u64 = (0..draws)
            .map(|_| inversion_count(SortState::random(n, &mut rng).array()))
            .sum();
        let mean = total as f64 / draws as f64;
        let target = (n * (n - 1)) as f64 / 4.0;
        assert!((mean / target - 1.0).abs() < 0.02, "n={n} mean={mean}");
    }
}

#[test]
fn single_element_is_solved_at_reset() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let env = SortEnv::random(SortInterface::BubbleInsertion, 1, RewardConfig::default(), &mut rng);
    assert!(env.is_solved());
    assert_eq!(env.state().array(), &[0]);
}

#[test]
fn graph_observation_shape_and_values() {
    let st = SortState::new(vec![2, 0, 3, 1], 0, 3).unwrap();
    let g = observe_graph(&st);
    assert_eq!(g.edges.len(), 12);
    for (&(i, j), f) in g.edges.iter().zip(&g.edge_features) {
        let a = st.array();
        assert_eq!(f[0], (i as i64 - j as i64).signum() as f64);
        assert_eq!(f[1], (a[i] - a[j]).signum() as f64);
    }
}

#[test]
fn full_view_swap_rejects_out_of_range_pointer() {
    let mut env = SortEnv::new(
        SortInterface::FullView,
        SortState::new(vec![1, 0, 2], 0, 2).unwrap(),
        RewardConfig::default(),
    );
    assert!(env.apply(&pointer_swap(0, 3)).is_err());
    let r = env.apply(&pointer_swap(0, 1)).unwrap();
    assert_eq!(r.terminal, Some(Outcome::Solved));
}

fn bubble_op() -> impl Strategy<Value = Instruction> {
    prop_oneof![
        (0usize..4).prop_map(swap_with_next),
        (0usize..4, any::<bool>()).prop_map(|(i, u)| move_var(i, u)),
        (0usize..4, 0usize..4).prop_map(|(i, j)| assign_var(i, j)),
    ]
}

fn quick_op() -> impl Strategy<Value = Instruction> {
    prop_oneof![
        bubble_op(),
        (0usize..2, [0usize..4, 0..4], [0usize..4, 0..4], 0usize..4)
            .prop_map(|(f, l, o, r)| function_call(f, l, o, r)),
        (0usize..4).prop_map(ret),
        (0usize..4, 0usize..4).prop_map(|(i, j)| swap(i, j)),
    ]
}

proptest! {
    #[test]
    fn machine_invariants_hold(
        seed in any::<u64>(),
        n in 1usize..12,
        ops in prop::collection::vec(quick_op(), 0..200),
        shaping in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reward = RewardConfig {
            mode: if shaping { RewardMode::Shaping } else { RewardMode::Sparse },
            step_penalty: 0.01,
        };
        let mut env = SortEnv::random(SortInterface::QuickSort, n, reward, &mut rng);
        let initial_h = env.state().ordered_pairs();
        let mut sorted_multiset = env.state().array().to_vec();
        sorted_multiset.sort();
        let mut total = 0.0;
        let mut steps = 0;
        for op in &ops {
            let r = env.apply(op).unwrap();
            total += r.reward;
            steps += 1;
            let st = env.state();
            prop_assert!(st.vars().iter().all(|&v| v >= st.low() && v <= st.high()));
            prop_assert_eq!(st.ordered_pairs(), orderedness(st.array(), st.low(), st.high()));
            let mut now = st.array().to_vec();
            now.sort();
            prop_assert_eq!(&now, &sorted_multiset);
            prop_assert_eq!(r.terminal == Some(Outcome::Solved), st.is_sorted());
            if r.terminal.is_some() {
                break;
            }
        }
        if shaping {
            let expected = env.state().ordered_pairs() as f64 - initial_h as f64 - 0.01 * steps as f64;
            prop_assert!((total - expected).abs() < 1e-9);
        } else {
            prop_assert!((total + 0.01 * steps as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn balanced_calls_restore_all_but_targets(
        vars in [0usize..6, 0..6, 0..6, 0..6],
        calls in prop::collection::vec(
            ((0usize..2, [0usize..4, 0..4], [0usize..4, 0..4], 0usize..4), 0usize..4, [0usize..6, 0..6, 0..6, 0..6]),
            1..6),
    ) {
        let mut env = SortEnv::new(
            SortInterface::QuickSort,
            SortState::new(vec![5, 0, 4, 1, 3, 2], 0, 5).unwrap(),
            RewardConfig::default(),
        );
        env.state_mut().set_vars(vars).unwrap();
        let mut expected = Vec::new();
        for ((f, l, o, r), _, _) in &calls {
            expected.push(env.state().vars().to_vec());
            env.apply(&function_call(*f, *l, *o, *r)).unwrap();
        }
        for (((_, _, _, r), local, scramble), before) in calls.iter().zip(expected).rev() {
            env.state_mut().set_vars(*scramble).unwrap();
            let value = scramble[*local];
            env.apply(&ret(*local)).unwrap();
            let mut want = before.clone();
            want[*r] = value;
            prop_assert_eq!(env.state().vars(), &want[..]);
        }
        prop_assert_eq!(env.state().exec.depth(), 0);
        prop_assert_eq!(env.state().exec.function_id, None);
    }

    #[test]
    fn swap_with_next_moves_inversions_by_one(seed in any::<u64>(), n in 2usize..15, p in 0usize..14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = SortEnv::random(SortInterface::BubbleInsertion, n, RewardConfig::default(), &mut rng);
        let p = p % n;
        env.state_mut().set_vars([p, 0, 0, 0]).unwrap();
        let before = inversion_count(env.state().array()) as i64;
        env.apply(&swap_with_next(0)).unwrap();
        let after = inversion_count(env.state().array()) as i64;
        if p + 1 < n {
            prop_assert_eq!((after - before).abs(), 1);
        } else {
            prop_assert_eq!(after, before);
        }
    }

    #[test]
    fn graph_features_antisymmetric(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st = SortState::random(n, &mut rng);
        let g = observe_graph(&st);
        prop_assert_eq!(g.edges.len(), n * (n - 1));
        for (k, &(i, j)) in g.edges.iter().enumerate() {
            let back = g.edges.iter().position(|&e| e == (j, i)).unwrap();
            prop_assert_eq!(g.edge_features[k][0], -g.edge_features[back][0]);
            prop_assert_eq!(g.edge_features[k][1], -g.edge_features[back][1]);
        }
    }

    #[test]
    fn orderedness_matches_pair_scan(a in prop::collection::vec(-20i64..20, 1..50)) {
        let n = a.len();
        let mut count = 0;
        for i in 0..n - 1 {
            if a[i] <= a[i + 1] {
                count += 1;
            }
        }
        prop_assert_eq!(orderedness(&a, 0, n - 1), count);
    }

    #[test]
    fn observation_width_constant(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = SortEnv::random(SortInterface::QuickSort, n, RewardConfig::default(), &mut rng);
        match env.observe() {
            Observation::Vector(v) => prop_assert_eq!(v.len(), 129),
            Observation::Graph(_) => prop_assert!(false),
        }
    }
}
