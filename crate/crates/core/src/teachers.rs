//! Scripted agents. Each decides from the observation alone, so the same
//! functions serve as imitation teachers and as efficiency baselines.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::features::ComparisonView;
use crate::knapsack::{self, knapsack_schema, FEATURE_WIDTH};
use crate::search::{self, search_schema};
use crate::sort::{
    self, assign_var, function_call, move_var, pointer_swap, quicksort_schema, ret, swap,
    swap_with_next, INTERFACE_WIDTH, NUM_FUNCTIONS, NUM_VARS,
};
use crate::vm::{Agent, GraphObservation, Instruction, Observation};

fn view(obs: &[f64]) -> ComparisonView<'_> {
    ComparisonView::new(obs, NUM_VARS)
}

/// Bubble sort over variables `i = 0`, `j = 1` with `l = 2` parked at `low`.
pub fn bubble_teacher(obs: &[f64]) -> Instruction {
    let (i, j, l) = (0, 1, 2);
    let v = view(obs);
    match v.var_cmp(i, j) {
        Ordering::Less => {
            if v.right(i) == Some(Ordering::Greater) {
                swap_with_next(i)
            } else {
                move_var(i, true)
            }
        }
        Ordering::Equal => move_var(j, false),
        Ordering::Greater => assign_var(i, l),
    }
}

/// Insertion sort: `i = 0` marks the sorted prefix end, `j = 1` sinks.
pub fn insertion_teacher(obs: &[f64]) -> Instruction {
    let (i, j) = (0, 1);
    let v = view(obs);
    match v.var_cmp(i, j) {
        Ordering::Less => assign_var(j, i),
        Ordering::Equal => move_var(i, true),
        Ordering::Greater => {
            if v.right(j) == Some(Ordering::Greater) {
                swap_with_next(j)
            } else if v.left(j) == Some(Ordering::Less) {
                move_var(j, false)
            } else {
                assign_var(j, i)
            }
        }
    }
}

const QS_FUNC: usize = 0;
const PARTITION_FUNC: usize = 1;

/// Current function id and previous action carried in a quick-sort observation.
pub fn quicksort_context(obs: &[f64]) -> (Option<usize>, Option<Instruction>) {
    let fid = &obs[INTERFACE_WIDTH..INTERFACE_WIDTH + NUM_FUNCTIONS + 1];
    let slot = fid.iter().position(|&x| x > 0.5).unwrap_or(0);
    let function = slot.checked_sub(1);
    let prev = quicksort_schema()
        .decode_prev_action(&obs[INTERFACE_WIDTH + NUM_FUNCTIONS + 1..])
        .expect("well-formed quick-sort observation");
    (function, prev)
}

/// Quick sort with the high end as pivot; function 0 sorts, function 1
/// partitions. Aliases `i = 0`, `j = 1`, `l = 2`, `h = 3`.
pub fn quicksort_teacher(obs: &[f64]) -> Instruction {
    let (i, j, l, h) = (0, 1, 2, 3);
    let v = view(obs);
    let (function, prev) = quicksort_context(obs);
    let prev = prev.as_ref();
    let is = |ins: Instruction| prev == Some(&ins);
    match function {
        None => function_call(QS_FUNC, [l, h], [l, h], h),
        Some(QS_FUNC) => {
            if v.var_cmp(l, h) != Ordering::Less {
                return ret(h);
            }
            if prev.is_none() {
                function_call(PARTITION_FUNC, [l, h], [l, h], i)
            } else if is(function_call(PARTITION_FUNC, [l, h], [l, h], i)) {
                assign_var(j, i)
            } else if is(assign_var(j, i)) {
                move_var(i, false)
            } else if is(move_var(i, false)) {
                if v.var_cmp(i, l) == Ordering::Greater {
                    function_call(QS_FUNC, [l, h], [l, i], i)
                } else {
                    move_var(j, true)
                }
            } else if is(function_call(QS_FUNC, [l, h], [l, i], i)) {
                move_var(j, true)
            } else if is(move_var(j, true)) && v.var_cmp(j, h) == Ordering::Less {
                function_call(QS_FUNC, [l, h], [j, h], h)
            } else {
                ret(h)
            }
        }
        Some(_) => {
            if prev.is_none() {
                assign_var(i, l)
            } else if is(assign_var(i, l)) {
                assign_var(j, l)
            } else if v.var_cmp(j, h) == Ordering::Less {
                if is(swap(i, j)) {
                    move_var(i, true)
                } else if (is(assign_var(j, l)) || is(move_var(j, true)))
                    && v.val_cmp(j, h) == Ordering::Less
                {
                    if v.var_cmp(i, j) != Ordering::Equal {
                        swap(i, j)
                    } else {
                        move_var(i, true)
                    }
                } else {
                    move_var(j, true)
                }
            } else if is(move_var(j, true)) {
                swap(i, h)
            } else {
                ret(i)
            }
        }
    }
}

/// `q` compared with `A[v_k]`.
fn query_cmp(obs: &[f64], k: usize) -> Ordering {
    let b = &obs[INTERFACE_WIDTH + 3 * k..INTERFACE_WIDTH + 3 * k + 3];
    if b[0] > 0.5 {
        Ordering::Less
    } else if b[1] > 0.5 {
        Ordering::Equal
    } else {
        Ordering::Greater
    }
}

fn search_prev(obs: &[f64]) -> Option<Instruction> {
    search_schema()
        .decode_prev_action(&obs[INTERFACE_WIDTH + 3 * search::NUM_VARS..])
        .expect("well-formed search observation")
}

/// Binary search with aliases `i = 0`, `l = 1`, `h = 2`.
pub fn binary_search_teacher(obs: &[f64]) -> Instruction {
    let (i, l, h) = (0, 1, 2);
    let v = view(obs);
    let q = query_cmp(obs, i);
    let prev = search_prev(obs);
    let is = |ins: Instruction| prev.as_ref() == Some(&ins);
    if v.var_cmp(l, h) == Ordering::Greater
        || (v.var_cmp(i, l) == Ordering::Equal && q == Ordering::Less)
        || (v.var_cmp(i, h) == Ordering::Equal && q == Ordering::Greater)
    {
        search::not_found()
    } else if q == Ordering::Equal {
        search::found(i)
    } else if prev.is_none() || is(search::assign_var(l, i)) || is(search::assign_var(h, i)) {
        search::assign_mid(i, l, h)
    } else if is(search::assign_mid(i, l, h)) {
        search::move_var(i, q == Ordering::Greater)
    } else if is(search::move_var(i, true)) {
        search::assign_var(l, i)
    } else if is(search::move_var(i, false)) {
        search::assign_var(h, i)
    } else {
        search::not_found()
    }
}

/// Left-to-right scan with variable 0.
pub fn linear_search_teacher(obs: &[f64]) -> Instruction {
    let v = view(obs);
    match query_cmp(obs, 0) {
        Ordering::Equal => search::found(0),
        Ordering::Less => search::not_found(),
        Ordering::Greater if v.right(0).is_none() => search::not_found(),
        Ordering::Greater => search::move_var(0, true),
    }
}

/// Depth-first enumeration of include/exclude decisions with weight pruning.
pub fn dfs_knapsack_teacher(obs: &[f64]) -> Instruction {
    let prev = knapsack_schema()
        .decode_prev_action(&obs[FEATURE_WIDTH..])
        .expect("well-formed knapsack observation");
    let past_end = obs[1] >= 0.0;
    let in_sol = obs[2] > 0.5;
    let fits = obs[3] > 0.5;
    let Some(prev) = prev else {
        return if past_end || !fits {
            knapsack::ret()
        } else {
            knapsack::put()
        };
    };
    match prev.type_id {
        knapsack::op::PUT | knapsack::op::POP => knapsack::move_var(true),
        knapsack::op::MOVE_VAR if prev.args[0] == 1 => knapsack::knapsack_call(),
        knapsack::op::KNAPSACK => knapsack::move_var(false),
        knapsack::op::MOVE_VAR if in_sol => knapsack::pop(),
        _ => knapsack::ret(),
    }
}

/// Stable rank of every node, read from the value-sign edge feature.
pub fn graph_ranks(g: &GraphObservation) -> Vec<usize> {
    let mut rank = vec![0usize; g.num_nodes];
    for (&(a, b), f) in g.edges.iter().zip(&g.edge_features) {
        if f[1] > 0.5 || (f[1].abs() < 0.5 && b < a) {
            rank[a] += 1;
        }
    }
    rank
}

/// Selection sort step: bring the element of the first misplaced rank home.
pub fn selection_teacher(g: &GraphObservation) -> Instruction {
    let rank = graph_ranks(g);
    match (0..rank.len()).find(|&r| rank[r] != r) {
        Some(r) => {
            let src = rank.iter().position(|&x| x == r).expect("ranks form a permutation");
            pointer_swap(r, src)
        }
        None => pointer_swap(0, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Teacher {
    Selection,
    Bubble,
    Insertion,
    QuickSort,
    BinarySearch,
    LinearSearch,
    DfsKnapsack,
}

impl Teacher {
    pub const ALL: [Teacher; 7] = [
        Teacher::Selection,
        Teacher::Bubble,
        Teacher::Insertion,
        Teacher::QuickSort,
        Teacher::BinarySearch,
        Teacher::LinearSearch,
        Teacher::DfsKnapsack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Teacher::Selection => "selection",
            Teacher::Bubble => "bubble",
            Teacher::Insertion => "insertion",
            Teacher::QuickSort => "quicksort",
            Teacher::BinarySearch => "binary",
            Teacher::LinearSearch => "linear",
            Teacher::DfsKnapsack => "dfs",
        }
    }

    /// Sorting interface the teacher acts through, if it sorts.
    pub fn sort_interface(self) -> Option<sort::SortInterface> {
        match self {
            Teacher::Selection => Some(sort::SortInterface::FullView),
            Teacher::Bubble | Teacher::Insertion => Some(sort::SortInterface::BubbleInsertion),
            Teacher::QuickSort => Some(sort::SortInterface::QuickSort),
            _ => None,
        }
    }

    pub fn decide(self, obs: &Observation) -> Instruction {
        match (self, obs) {
            (Teacher::Selection, Observation::Graph(g)) => selection_teacher(g),
            (Teacher::Bubble, Observation::Vector(v)) => bubble_teacher(v),
            (Teacher::Insertion, Observation::Vector(v)) => insertion_teacher(v),
            (Teacher::QuickSort, Observation::Vector(v)) => quicksort_teacher(v),
            (Teacher::BinarySearch, Observation::Vector(v)) => binary_search_teacher(v),
            (Teacher::LinearSearch, Observation::Vector(v)) => linear_search_teacher(v),
            (Teacher::DfsKnapsack, Observation::Vector(v)) => dfs_knapsack_teacher(v),
            (t, _) => panic!("observation kind does not match teacher `{t}`"),
        }
    }
}

impl fmt::Display for Teacher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Teacher {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        let alias = match s.as_str() {
            "quick" | "quick-sort" => "quicksort",
            "binary-search" => "binary",
            "linear-search" => "linear",
            "dfs-knapsack" => "dfs",
            other => other,
        };
        Teacher::ALL
            .into_iter()
            .find(|t| t.name() == alias)
            .ok_or_else(|| format!("unknown teacher `{s}`"))
    }
}

impl Agent for Teacher {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn RngCore) -> Instruction {
        self.decide(obs)
    }
}
