//! Sorting machine with three interfaces: full view (graph observation and
//! `Swap(i, j)` on raw positions), bubble/insertion (68 features, three
//! instruction types) and quick sort (129 features, adds functions and `Swap`).

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::{comparison_width, write_comparison_features};
use crate::vm::{
    ArgKind, Environment, ExecState, GraphObservation, Instruction, InstructionSchema,
    InstructionType, Observation, Outcome, StepResult, VmError,
};
use crate::InstanceError;

pub const NUM_VARS: usize = 4;
pub const NUM_FUNCTIONS: usize = 2;
pub const INTERFACE_WIDTH: usize = comparison_width(NUM_VARS);
/// 68 + (F + 1) + 58.
pub const QUICKSORT_WIDTH: usize = INTERFACE_WIDTH + NUM_FUNCTIONS + 1 + 58;

/// Instruction type ids. The bubble/insertion schema uses the first three.
pub mod op {
    pub const SWAP_WITH_NEXT: usize = 0;
    pub const MOVE_VAR: usize = 1;
    pub const ASSIGN_VAR: usize = 2;
    pub const FUNCTION_CALL: usize = 3;
    pub const RETURN: usize = 4;
    pub const SWAP: usize = 5;
    /// Full-view schema has a single `Swap` over node pointers.
    pub const POINTER_SWAP: usize = 0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SortInterface {
    FullView,
    BubbleInsertion,
    QuickSort,
}

impl SortInterface {
    pub fn schema(self) -> &'static InstructionSchema {
        match self {
            SortInterface::FullView => full_view_schema(),
            SortInterface::BubbleInsertion => bubble_insertion_schema(),
            SortInterface::QuickSort => quicksort_schema(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SortInterface::FullView => "full-view",
            SortInterface::BubbleInsertion => "bubble-insertion",
            SortInterface::QuickSort => "quicksort",
        }
    }
}

impl std::fmt::Display for SortInterface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SortInterface {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-view" | "full" => Ok(SortInterface::FullView),
            "bubble-insertion" | "bubble" | "insertion" => Ok(SortInterface::BubbleInsertion),
            "quicksort" | "quick-sort" | "quick" => Ok(SortInterface::QuickSort),
            _ => Err(format!("unknown sort interface {s:?}")),
        }
    }
}

fn var() -> ArgKind {
    ArgKind::Int(NUM_VARS)
}

fn base_types() -> Vec<InstructionType> {
    vec![
        InstructionType::new("SwapWithNext", vec![var()]),
        InstructionType::new("MoveVar", vec![var(), ArgKind::Bool]),
        InstructionType::new("AssignVar", vec![var(), var()]),
    ]
}

pub fn bubble_insertion_schema() -> &'static InstructionSchema {
    static S: OnceLock<InstructionSchema> = OnceLock::new();
    S.get_or_init(|| InstructionSchema::new("bubble-insertion", base_types()).unwrap())
}

pub fn quicksort_schema() -> &'static InstructionSchema {
    static S: OnceLock<InstructionSchema> = OnceLock::new();
    S.get_or_init(|| {
        let mut types = base_types();
        // FunctionCall(id, l1, l2, o1, o2, r1)
        let mut call_args = vec![ArgKind::Int(NUM_FUNCTIONS)];
        call_args.extend(std::iter::repeat(var()).take(5));
        types.push(InstructionType::new("FunctionCall", call_args).function_call());
        types.push(InstructionType::new("Return", vec![var()]).returns());
        types.push(InstructionType::new("Swap", vec![var(), var()]));
        InstructionSchema::new("quicksort", types).unwrap()
    })
}

pub fn full_view_schema() -> &'static InstructionSchema {
    static S: OnceLock<InstructionSchema> = OnceLock::new();
    S.get_or_init(|| {
        InstructionSchema::new(
            "full-view",
            vec![InstructionType::new(
                "Swap",
                vec![ArgKind::Pointer, ArgKind::Pointer],
            )],
        )
        .unwrap()
    })
}

pub fn swap_with_next(i: usize) -> Instruction {
    Instruction::new(op::SWAP_WITH_NEXT, vec![i])
}

pub fn move_var(i: usize, up: bool) -> Instruction {
    Instruction::new(op::MOVE_VAR, vec![i, usize::from(up)])
}

pub fn assign_var(i: usize, j: usize) -> Instruction {
    Instruction::new(op::ASSIGN_VAR, vec![i, j])
}

/// `v_ret <- function(v_locals[0] <- v_outer[0], v_locals[1] <- v_outer[1])`.
pub fn function_call(
    function: usize,
    locals: [usize; 2],
    outer: [usize; 2],
    ret: usize,
) -> Instruction {
    Instruction::new(
        op::FUNCTION_CALL,
        vec![function, locals[0], locals[1], outer[0], outer[1], ret],
    )
}

pub fn ret(local: usize) -> Instruction {
    Instruction::new(op::RETURN, vec![local])
}

pub fn swap(i: usize, j: usize) -> Instruction {
    Instruction::new(op::SWAP, vec![i, j])
}

pub fn pointer_swap(i: usize, j: usize) -> Instruction {
    Instruction::new(op::POINTER_SWAP, vec![i, j])
}

/// Number of adjacent in-order pairs in `a[low..=high]`.
pub fn orderedness(a: &[i64], low: usize, high: usize) -> usize {
    a[low..=high].windows(2).filter(|w| w[0] <= w[1]).count()
}

pub fn shaping_reward(prev_h: usize, next_h: usize, step_penalty: f64) -> f64 {
    next_h as f64 - prev_h as f64 - step_penalty
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// `-c` per step.
    Sparse,
    /// Orderedness increment minus `c`.
    Shaping,
}

impl std::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardMode::Sparse => "sparse",
            RewardMode::Shaping => "shaping",
        })
    }
}

impl std::str::FromStr for RewardMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(RewardMode::Sparse),
            "shaping" => Ok(RewardMode::Shaping),
            _ => Err(format!("unknown reward mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub step_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            mode: RewardMode::Sparse,
            step_penalty: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortState {
    array: Vec<i64>,
    low: usize,
    high: usize,
    pub exec: ExecState,
    ordered_pairs: usize,
}

impl SortState {
    pub fn new(array: Vec<i64>, low: usize, high: usize) -> Result<Self, InstanceError> {
        if array.is_empty() || low > high || high >= array.len() {
            return Err(InstanceError::Range(format!(
                "need low <= high < len, got low={low} high={high} len={}",
                array.len()
            )));
        }
        let ordered_pairs = orderedness(&array, low, high);
        let n = high - low + 1;
        Ok(SortState {
            array,
            low,
            high,
            exec: ExecState::new(vec![low, high, low, high], 2 * n + 64),
            ordered_pairs,
        })
    }

    /// Uniform random permutation of `0..n`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        assert!(n >= 1, "instance size must be positive");
        let mut a: Vec<i64> = (0..n as i64).collect();
        a.shuffle(rng);
        SortState::new(a, 0, n - 1).unwrap()
    }

    pub fn array(&self) -> &[i64] {
        &self.array
    }

    pub fn low(&self) -> usize {
        self.low
    }

    pub fn high(&self) -> usize {
        self.high
    }

    pub fn len(&self) -> usize {
        self.high - self.low + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vars(&self) -> &[usize] {
        &self.exec.vars
    }

    pub fn set_vars(&mut self, vars: [usize; NUM_VARS]) -> Result<(), InstanceError> {
        if vars.iter().any(|&v| v < self.low || v > self.high) {
            return Err(InstanceError::Range(format!(
                "variables {vars:?} outside [{}, {}]",
                self.low, self.high
            )));
        }
        self.exec.vars = vars.to_vec();
        Ok(())
    }

    pub fn ordered_pairs(&self) -> usize {
        self.ordered_pairs
    }

    pub fn is_sorted(&self) -> bool {
        self.ordered_pairs == self.high - self.low
    }

    fn pair_ordered(&self, i: usize) -> bool {
        self.array[i] <= self.array[i + 1]
    }

    /// Swaps two positions, updating the orderedness count in O(1).
    pub fn swap_positions(&mut self, p: usize, q: usize) {
        if p == q {
            return;
        }
        let mut touched = [usize::MAX; 4];
        let mut count = 0;
        for cand in [p.wrapping_sub(1), p, q.wrapping_sub(1), q] {
            if cand >= self.low && cand < self.high && !touched[..count].contains(&cand) {
                touched[count] = cand;
                count += 1;
            }
        }
        for &i in &touched[..count] {
            self.ordered_pairs -= usize::from(self.pair_ordered(i));
        }
        self.array.swap(p, q);
        for &i in &touched[..count] {
            self.ordered_pairs += usize::from(self.pair_ordered(i));
        }
    }

    /// `n low high a_0 a_1 ...`
    pub fn to_line(&self) -> String {
        let mut s = format!("{} {} {}", self.array.len(), self.low, self.high);
        for x in &self.array {
            write!(s, " {x}").unwrap();
        }
        s
    }

    pub fn from_line(line: &str) -> Result<Self, InstanceError> {
        let nums: Vec<i64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|e| InstanceError::Parse(format!("`{t}`: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if nums.len() < 3 {
            return Err(InstanceError::Parse("expected `n low high values...`".into()));
        }
        let n = usize::try_from(nums[0]).map_err(|_| InstanceError::Parse("negative n".into()))?;
        if nums.len() != 3 + n {
            return Err(InstanceError::Parse(format!(
                "declared {n} values, found {}",
                nums.len() - 3
            )));
        }
        let low = usize::try_from(nums[1]).map_err(|_| InstanceError::Parse("negative low".into()))?;
        let high =
            usize::try_from(nums[2]).map_err(|_| InstanceError::Parse("negative high".into()))?;
        SortState::new(nums[3..].to_vec(), low, high)
    }
}

/// Appends the 68 interface features of `state`.
pub fn write_interface_features(state: &SortState, out: &mut Vec<f64>) {
    write_comparison_features(&state.array, state.low, state.high, &state.exec.vars, out);
}

pub fn observe_bubble_insertion(state: &SortState) -> Vec<f64> {
    let mut out = Vec::with_capacity(INTERFACE_WIDTH);
    write_interface_features(state, &mut out);
    out
}

/// Interface features, function-id one-hot (slot 0 = outermost scope) and
/// the previous-action encoding.
pub fn observe_quicksort(state: &SortState) -> Vec<f64> {
    let mut out = Vec::with_capacity(QUICKSORT_WIDTH);
    write_interface_features(state, &mut out);
    let mut fid = [0.0; NUM_FUNCTIONS + 1];
    fid[state.exec.function_id.map_or(0, |f| f + 1)] = 1.0;
    out.extend_from_slice(&fid);
    let start = out.len();
    out.resize(QUICKSORT_WIDTH, 0.0);
    quicksort_schema()
        .encode_into(state.exec.prev_action.as_ref(), &mut out[start..])
        .expect("previous action was validated on execution");
    out
}

fn sign(x: i64) -> f64 {
    x.signum() as f64
}

/// Fully connected directed graph over the range, one constant node feature,
/// edge `(i, j)` carrying `[sign(i - j), sign(A[i] - A[j])]`.
pub fn observe_graph(state: &SortState) -> GraphObservation {
    let n = state.len();
    let a = &state.array[state.low..=state.high];
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1));
    let mut edge_features = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                edges.push((i, j));
                edge_features.push([sign(i as i64 - j as i64), sign(a[i] - a[j])]);
            }
        }
    }
    GraphObservation {
        num_nodes: n,
        node_features: vec![1.0; n],
        node_dim: 1,
        edges,
        edge_features,
    }
}

#[derive(Debug, Clone)]
pub struct SortEnv {
    interface: SortInterface,
    state: SortState,
    reward: RewardConfig,
}

impl SortEnv {
    pub fn new(interface: SortInterface, state: SortState, reward: RewardConfig) -> Self {
        SortEnv {
            interface,
            state,
            reward,
        }
    }

    pub fn random<R: Rng + ?Sized>(
        interface: SortInterface,
        n: usize,
        reward: RewardConfig,
        rng: &mut R,
    ) -> Self {
        SortEnv::new(interface, SortState::random(n, rng), reward)
    }

    pub fn interface(&self) -> SortInterface {
        self.interface
    }

    pub fn state(&self) -> &SortState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SortState {
        &mut self.state
    }

    fn execute(&mut self, ins: &Instruction) -> Result<Option<Outcome>, VmError> {
        let st = &mut self.state;
        if self.interface == SortInterface::FullView {
            let n = st.len();
            for (index, &value) in ins.args.iter().enumerate() {
                if value >= n {
                    return Err(VmError::ArgRange {
                        name: "Swap",
                        index,
                        value,
                        cardinality: n,
                    });
                }
            }
            let (p, q) = (st.low + ins.args[0], st.low + ins.args[1]);
            st.swap_positions(p, q);
            st.exec.prev_action = Some(ins.clone());
            return Ok(None);
        }
        let a = &ins.args;
        match ins.type_id {
            op::SWAP_WITH_NEXT => {
                let p = st.exec.vars[a[0]];
                if p < st.high {
                    st.swap_positions(p, p + 1);
                }
            }
            op::MOVE_VAR => {
                let v = &mut st.exec.vars[a[0]];
                *v = if a[1] == 1 {
                    (*v + 1).min(st.high)
                } else {
                    v.saturating_sub(1).max(st.low)
                };
            }
            op::ASSIGN_VAR => st.exec.vars[a[0]] = st.exec.vars[a[1]],
            op::FUNCTION_CALL => {
                return match st.exec.push_call(ins, a[0], &[(a[1], a[3]), (a[2], a[4])], &[a[5]]) {
                    Ok(()) => Ok(None),
                    Err(VmError::StackOverflow(_)) => Ok(Some(Outcome::BudgetExhausted)),
                    Err(e) => Err(e),
                };
            }
            op::RETURN => {
                return match st.exec.pop_return(&[a[0]]) {
                    Ok(()) => Ok(None),
                    // outermost scope: no-op
                    Err(VmError::EmptyStack) => {
                        st.exec.prev_action = Some(ins.clone());
                        Ok(None)
                    }
                    Err(e) => Err(e),
                };
            }
            op::SWAP => {
                let (p, q) = (st.exec.vars[a[0]], st.exec.vars[a[1]]);
                st.swap_positions(p, q);
            }
            other => return Err(VmError::UnknownType(other)),
        }
        st.exec.prev_action = Some(ins.clone());
        Ok(None)
    }
}

impl Environment for SortEnv {
    fn schema(&self) -> &InstructionSchema {
        self.interface.schema()
    }

    fn observe(&self) -> Observation {
        match self.interface {
            SortInterface::FullView => Observation::Graph(observe_graph(&self.state)),
            SortInterface::BubbleInsertion => {
                Observation::Vector(observe_bubble_insertion(&self.state))
            }
            SortInterface::QuickSort => Observation::Vector(observe_quicksort(&self.state)),
        }
    }

    fn apply(&mut self, ins: &Instruction) -> Result<StepResult, VmError> {
        self.schema().validate(ins)?;
        let before = self.state.ordered_pairs;
        let overflow = self.execute(ins)?;
        let after = self.state.ordered_pairs;
        let reward = match self.reward.mode {
            RewardMode::Sparse => -self.reward.step_penalty,
            RewardMode::Shaping => shaping_reward(before, after, self.reward.step_penalty),
        };
        let terminal = if self.state.is_sorted() {
            Some(Outcome::Solved)
        } else {
            overflow
        };
        Ok(StepResult { reward, terminal })
    }

    fn is_solved(&self) -> bool {
        self.state.is_sorted()
    }

    fn size(&self) -> usize {
        self.state.len()
    }

    fn render(&self) -> String {
        render_sort_state(&self.state, self.schema())
    }
}

pub(crate) const VAR_NAMES: [char; NUM_VARS] = ['a', 'b', 'c', 'd'];

pub(crate) fn function_name(f: Option<usize>) -> String {
    match f {
        None => "main".to_string(),
        Some(f) => format!("Func{}", (b'A' + f as u8) as char),
    }
}

fn render_sort_state(st: &SortState, schema: &InstructionSchema) -> String {
    let mut s = String::new();
    let prev = st
        .exec
        .prev_action
        .as_ref()
        .map_or("None".to_string(), |p| schema.display(p).to_string());
    writeln!(s, "fn: {}    prev: {}", function_name(st.exec.function_id), prev).unwrap();
    let cells: Vec<String> = st.array.iter().map(|x| x.to_string()).collect();
    let width = cells.iter().map(|c| c.len()).max().unwrap_or(1) + 1;
    let mut line = String::from("A:");
    for c in &cells {
        write!(line, " {c:>width$}", width = width - 1).unwrap();
    }
    writeln!(s, "{line}").unwrap();
    if schema.name() != "full-view" {
        let mut arrows = String::from("  ");
        for pos in 0..st.array.len() {
            let names: String = st
                .exec
                .vars
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == pos)
                .map(|(i, _)| VAR_NAMES[i])
                .collect();
            write!(arrows, " {names:>width$}", width = width - 1).unwrap();
        }
        writeln!(s, "{}", arrows.trim_end()).unwrap();
    }
    for (depth, e) in st.exec.stack.iter().enumerate() {
        let vars: Vec<String> = e
            .saved_variables
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{}={}", VAR_NAMES[i], v))
            .collect();
        let into = match &e.caller_prev_action {
            Some(ins) if ins.type_id == op::FUNCTION_CALL => function_name(Some(ins.args[0])),
            _ => "?".to_string(),
        };
        let targets: String = e.return_targets.iter().map(|&t| VAR_NAMES[t]).collect();
        writeln!(
            s,
            "stack[{depth}]: prev:{} in:{} ({}) ret->{}",
            function_name(e.caller_function),
            into,
            vars.join(","),
            targets
        )
        .unwrap();
    }
    s
}
