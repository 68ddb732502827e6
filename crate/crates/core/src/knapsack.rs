//! 0/1 knapsack as a budgeted search machine over a single item cursor.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::Rng;

use crate::vm::{
    ArgKind, Environment, ExecState, Instruction, InstructionSchema, InstructionType, Observation,
    Outcome, StepResult, VmError,
};
use crate::InstanceError;

pub const FEATURE_WIDTH: usize = 7;
pub const OBSERVATION_WIDTH: usize = FEATURE_WIDTH + 7;

pub mod op {
    pub const PUT: usize = 0;
    pub const POP: usize = 1;
    pub const MOVE_VAR: usize = 2;
    pub const KNAPSACK: usize = 3;
    pub const RETURN: usize = 4;
}

pub fn knapsack_schema() -> &'static InstructionSchema {
    static S: OnceLock<InstructionSchema> = OnceLock::new();
    S.get_or_init(|| {
        InstructionSchema::new(
            "knapsack",
            vec![
                InstructionType::new("Put", vec![]),
                InstructionType::new("Pop", vec![]),
                InstructionType::new("MoveVar", vec![ArgKind::Bool]),
                InstructionType::new("Knapsack", vec![]).function_call(),
                InstructionType::new("Return", vec![]).returns(),
            ],
        )
        .unwrap()
    })
}

pub fn put() -> Instruction {
    Instruction::new(op::PUT, vec![])
}

pub fn pop() -> Instruction {
    Instruction::new(op::POP, vec![])
}

pub fn move_var(up: bool) -> Instruction {
    Instruction::new(op::MOVE_VAR, vec![usize::from(up)])
}

pub fn knapsack_call() -> Instruction {
    Instruction::new(op::KNAPSACK, vec![])
}

pub fn ret() -> Instruction {
    Instruction::new(op::RETURN, vec![])
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    pub capacity: f64,
}

impl KnapsackInstance {
    pub fn new(weights: Vec<f64>, values: Vec<f64>, capacity: f64) -> Result<Self, InstanceError> {
        if weights.is_empty() || weights.len() != values.len() {
            return Err(InstanceError::Range(format!(
                "need equal nonempty weight/value lists, got {} and {}",
                weights.len(),
                values.len()
            )));
        }
        if weights.iter().chain(&values).chain([&capacity]).any(|x| !x.is_finite()) {
            return Err(InstanceError::Range("non-finite weight, value or capacity".into()));
        }
        Ok(KnapsackInstance {
            weights,
            values,
            capacity,
        })
    }

    /// Weights and values uniform in `[0, 1)`, capacity half the total weight.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        assert!(n >= 1, "instance size must be positive");
        let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let capacity = weights.iter().sum::<f64>() / 2.0;
        KnapsackInstance {
            weights,
            values,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Best feasible value by exhaustive enumeration; sums run in index order.
    pub fn brute_force_optimum(&self) -> f64 {
        let n = self.len();
        assert!(n <= 24, "brute force limited to 24 items");
        let mut best = 0.0;
        for mask in 0u32..(1 << n) {
            let (w, v) = subset_totals(&self.weights, &self.values, |j| mask >> j & 1 == 1);
            if w <= self.capacity && v > best {
                best = v;
            }
        }
        best
    }

    /// `n W w_0 .. w_{n-1} v_0 .. v_{n-1}`, shortest round-trip decimals.
    pub fn to_line(&self) -> String {
        let mut s = format!("{} {:?}", self.len(), self.capacity);
        for x in self.weights.iter().chain(&self.values) {
            write!(s, " {x:?}").unwrap();
        }
        s
    }

    pub fn from_line(line: &str) -> Result<Self, InstanceError> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let n: usize = toks
            .first()
            .ok_or_else(|| InstanceError::Parse("empty line".into()))?
            .parse()
            .map_err(|e| InstanceError::Parse(format!("n: {e}")))?;
        if toks.len() != 2 + 2 * n {
            return Err(InstanceError::Parse(format!(
                "expected {} fields, found {}",
                2 + 2 * n,
                toks.len()
            )));
        }
        let nums: Vec<f64> = toks[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| InstanceError::Parse(format!("`{t}`: {e}")))
            })
            .collect::<Result<_, _>>()?;
        KnapsackInstance::new(nums[1..=n].to_vec(), nums[n + 1..].to_vec(), nums[0])
    }
}

fn subset_totals(w: &[f64], v: &[f64], member: impl Fn(usize) -> bool) -> (f64, f64) {
    let mut tw = 0.0;
    let mut tv = 0.0;
    for j in 0..w.len() {
        if member(j) {
            tw += w[j];
            tv += v[j];
        }
    }
    (tw, tv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackState {
    instance: KnapsackInstance,
    /// Cursor in `[-1, n]`.
    index: i64,
    in_sol: Vec<bool>,
    cur_w: f64,
    cur_v: f64,
    best_v: f64,
    /// Call stack without variables; only the previous action is saved.
    pub exec: ExecState,
}

impl KnapsackState {
    pub fn new(instance: KnapsackInstance) -> Self {
        let n = instance.len();
        KnapsackState {
            in_sol: vec![false; n],
            instance,
            index: 0,
            cur_w: 0.0,
            cur_v: 0.0,
            best_v: 0.0,
            exec: ExecState::new(Vec::new(), 2 * n + 64),
        }
    }

    pub fn instance(&self) -> &KnapsackInstance {
        &self.instance
    }

    pub fn index(&self) -> i64 {
        self.index
    }

    pub fn in_solution(&self, j: usize) -> bool {
        self.in_sol[j]
    }

    pub fn solution(&self) -> &[bool] {
        &self.in_sol
    }

    pub fn current_weight(&self) -> f64 {
        self.cur_w
    }

    pub fn current_value(&self) -> f64 {
        self.cur_v
    }

    pub fn best_value(&self) -> f64 {
        self.best_v
    }

    pub fn depth(&self) -> usize {
        self.exec.depth()
    }

    fn n(&self) -> usize {
        self.instance.len()
    }

    fn cursor(&self) -> Option<usize> {
        usize::try_from(self.index).ok().filter(|&i| i < self.n())
    }

    fn recompute_totals(&mut self) {
        let sol = &self.in_sol;
        let (w, v) = subset_totals(&self.instance.weights, &self.instance.values, |j| sol[j]);
        self.cur_w = w;
        self.cur_v = v;
    }

    /// First item still undecided at the cursor.
    fn rest_start(&self) -> usize {
        match self.cursor() {
            Some(i) if self.in_sol[i] => i + 1,
            _ => self.index.clamp(0, self.n() as i64) as usize,
        }
    }

    /// The seven progress features.
    pub fn features(&self) -> [f64; FEATURE_WIDTH] {
        let inst = &self.instance;
        let n = self.n() as i64;
        let start = self.rest_start();
        let v_rest: f64 = inst.values[start..].iter().sum();
        let w_rest: f64 = inst.weights[start..].iter().sum();
        let w_min = inst.weights[start..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let in_sol = self.cursor().is_some_and(|i| self.in_sol[i]);
        let cap = inst.capacity;
        [
            self.index.signum() as f64,
            (self.index - n).signum() as f64,
            f64::from(in_sol),
            f64::from(self.cur_w <= cap),
            f64::from(self.cur_v + v_rest > self.best_v),
            f64::from(self.cur_w + w_rest <= cap),
            f64::from(self.cur_w + w_min <= cap),
        ]
    }
}

pub fn observe_knapsack(state: &KnapsackState) -> Vec<f64> {
    let mut out = vec![0.0; OBSERVATION_WIDTH];
    out[..FEATURE_WIDTH].copy_from_slice(&state.features());
    knapsack_schema()
        .encode_into(state.exec.prev_action.as_ref(), &mut out[FEATURE_WIDTH..])
        .expect("previous action was validated on execution");
    out
}

#[derive(Debug, Clone)]
pub struct KnapsackEnv {
    state: KnapsackState,
}

impl KnapsackEnv {
    pub fn new(instance: KnapsackInstance) -> Self {
        KnapsackEnv {
            state: KnapsackState::new(instance),
        }
    }

    pub fn state(&self) -> &KnapsackState {
        &self.state
    }
}

impl Environment for KnapsackEnv {
    fn schema(&self) -> &InstructionSchema {
        knapsack_schema()
    }

    fn observe(&self) -> Observation {
        Observation::Vector(observe_knapsack(&self.state))
    }

    fn apply(&mut self, ins: &Instruction) -> Result<StepResult, VmError> {
        knapsack_schema().validate(ins)?;
        let st = &mut self.state;
        let mut terminal = None;
        let mut set_prev = true;
        match ins.type_id {
            op::PUT | op::POP => {
                let want = ins.type_id == op::PUT;
                if let Some(i) = st.cursor() {
                    if st.in_sol[i] != want {
                        st.in_sol[i] = want;
                        st.recompute_totals();
                    }
                }
            }
            op::MOVE_VAR => {
                let delta = if ins.args[0] == 1 { 1 } else { -1 };
                st.index = (st.index + delta).clamp(-1, st.n() as i64);
            }
            op::KNAPSACK => {
                set_prev = false;
                if let Err(VmError::StackOverflow(_)) = st.exec.push_call(ins, 0, &[], &[]) {
                    terminal = Some(Outcome::BudgetExhausted);
                }
            }
            op::RETURN => match st.exec.pop_return(&[]) {
                Ok(()) => set_prev = false,
                Err(VmError::EmptyStack) => terminal = Some(Outcome::Solved),
                Err(e) => return Err(e),
            },
            other => return Err(VmError::UnknownType(other)),
        }
        if set_prev {
            st.exec.prev_action = Some(ins.clone());
        }
        let before = st.best_v;
        if st.cur_w <= st.instance.capacity && st.cur_v > st.best_v {
            st.best_v = st.cur_v;
        }
        Ok(StepResult {
            reward: st.best_v - before,
            terminal,
        })
    }

    fn is_solved(&self) -> bool {
        false
    }

    fn size(&self) -> usize {
        self.state.n()
    }

    fn render(&self) -> String {
        let st = &self.state;
        let mut s = String::new();
        let prev = st
            .exec
            .prev_action
            .as_ref()
            .map_or("None".to_string(), |p| knapsack_schema().display(p).to_string());
        writeln!(
            s,
            "i: {}  depth: {}  prev: {}  w: {:.4}/{:.4}  v: {:.4}  best: {:.4}",
            st.index,
            st.depth(),
            prev,
            st.cur_w,
            st.instance.capacity,
            st.cur_v,
            st.best_v
        )
        .unwrap();
        let sol: String = st.in_sol.iter().map(|&b| if b { '1' } else { '0' }).collect();
        writeln!(s, "sol: {sol}").unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(w: &[f64], v: &[f64]) -> KnapsackInstance {
        let cap = w.iter().sum::<f64>() / 2.0;
        KnapsackInstance::new(w.to_vec(), v.to_vec(), cap).unwrap()
    }

    #[test]
    fn widths() {
        assert_eq!(knapsack_schema().encoding_width().unwrap(), 7);
        assert_eq!(OBSERVATION_WIDTH, 14);
    }

    #[test]
    fn single_item_optimum_is_zero() {
        let k = inst(&[0.6], &[0.9]);
        assert_eq!(k.brute_force_optimum(), 0.0);
    }

    #[test]
    fn reset_features() {
        let st = KnapsackState::new(inst(&[0.2, 0.4], &[0.5, 0.5]));
        let f = st.features();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], -1.0);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[3], 1.0);
        assert_eq!(f[4], 1.0);
        // 0.6 > 0.3
        assert_eq!(f[5], 0.0);
        assert_eq!(f[6], 1.0);
        assert_eq!(observe_knapsack(&st)[13], 1.0);
    }

    #[test]
    fn cursor_clamps_and_out_of_range_put_is_noop() {
        let mut env = KnapsackEnv::new(inst(&[0.2, 0.4], &[0.5, 0.5]));
        for _ in 0..4 {
            env.apply(&move_var(false)).unwrap();
        }
        assert_eq!(env.state().index(), -1);
        env.apply(&put()).unwrap();
        assert_eq!(env.state().current_weight(), 0.0);
        for _ in 0..5 {
            env.apply(&move_var(true)).unwrap();
        }
        assert_eq!(env.state().index(), 2);
        assert_eq!(env.state().features()[1], 0.0);
    }

    #[test]
    fn reward_tracks_best_value() {
        let mut env = KnapsackEnv::new(inst(&[0.2, 0.4], &[0.5, 0.7]));
        let r = env.apply(&put()).unwrap();
        assert_eq!(r.reward, 0.5);
        env.apply(&move_var(true)).unwrap();
        // infeasible: 0.6 > 0.3
        let r = env.apply(&put()).unwrap();
        assert_eq!(r.reward, 0.0);
        let r = env.apply(&pop()).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(env.state().best_value(), 0.5);
    }

    #[test]
    fn call_and_return_keep_cursor() {
        let mut env = KnapsackEnv::new(inst(&[0.2, 0.4], &[0.5, 0.7]));
        env.apply(&move_var(true)).unwrap();
        env.apply(&knapsack_call()).unwrap();
        assert_eq!(env.state().exec.prev_action, None);
        env.apply(&move_var(true)).unwrap();
        let r = env.apply(&ret()).unwrap();
        assert_eq!(r.terminal, None);
        assert_eq!(env.state().index(), 2);
        assert_eq!(env.state().exec.prev_action, Some(knapsack_call()));
        let r = env.apply(&ret()).unwrap();
        assert_eq!(r.terminal, Some(Outcome::Solved));
    }

    #[test]
    fn line_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = KnapsackInstance::random(6, &mut rng);
        let back = KnapsackInstance::from_line(&k.to_line()).unwrap();
        assert_eq!(back, k);
        assert!(KnapsackInstance::from_line("2 1.0 0.5").is_err());
    }
}
