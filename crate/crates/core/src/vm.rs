//! Environment-agnostic instruction machinery.
//!
//! Every task exposes a typed instruction set ([`InstructionSchema`]). An
//! [`Instruction`] is a type tag plus a list of small integer arguments whose
//! kinds are fixed by the schema. This module also owns the fixed-width
//! one-hot encoding of the previous action, the function call stack shared by
//! the sorting and knapsack machines, and the generic episode loop.

use std::fmt;
use std::io::{self, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("unknown instruction type {0}")]
    UnknownType(usize),
    #[error("{name}: expected {expected} arguments, got {got}")]
    Arity {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{name}: argument {index} = {value} out of range (cardinality {cardinality})")]
    ArgRange {
        name: &'static str,
        index: usize,
        value: usize,
        cardinality: usize,
    },
    #[error("pointer arguments have no fixed-width encoding")]
    PointerEncoding,
    #[error("malformed action encoding: {0}")]
    MalformedEncoding(String),
    #[error("duplicate instruction type `{0}`")]
    DuplicateType(&'static str),
    #[error("call stack overflow (depth limit {0})")]
    StackOverflow(usize),
    #[error("return with empty call stack")]
    EmptyStack,
    #[error("return arity mismatch: {expected} targets, {got} values")]
    ReturnArity { expected: usize, got: usize },
}

/// Kind of a single instruction argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgKind {
    Bool,
    /// Integer in `[0, cardinality)`.
    Int(usize),
    /// Index of a graph node; the range depends on the instance.
    Pointer,
}

impl ArgKind {
    pub fn encoding_width(self) -> Option<usize> {
        match self {
            ArgKind::Bool => Some(1),
            ArgKind::Int(c) => Some(c),
            ArgKind::Pointer => None,
        }
    }

    /// Number of values the argument can take, when fixed.
    pub fn cardinality(self) -> Option<usize> {
        match self {
            ArgKind::Bool => Some(2),
            ArgKind::Int(c) => Some(c),
            ArgKind::Pointer => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionType {
    pub name: &'static str,
    pub args: Vec<ArgKind>,
    pub call: bool,
    pub ret: bool,
    pub terminal: bool,
}

impl InstructionType {
    pub fn new(name: &'static str, args: Vec<ArgKind>) -> Self {
        InstructionType {
            name,
            args,
            call: false,
            ret: false,
            terminal: false,
        }
    }

    pub fn function_call(mut self) -> Self {
        self.call = true;
        self
    }

    pub fn returns(mut self) -> Self {
        self.ret = true;
        self
    }

    pub fn terminal(mut self) -> Self {
        self.terminal = true;
        self
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    fn encoding_width(&self) -> Result<usize, VmError> {
        self.args
            .iter()
            .map(|k| k.encoding_width().ok_or(VmError::PointerEncoding))
            .sum()
    }
}

/// A typed action: instruction type index plus argument values.
///
/// Boolean arguments are stored as 0/1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub type_id: usize,
    pub args: Vec<usize>,
}

impl Instruction {
    pub fn new(type_id: usize, args: Vec<usize>) -> Self {
        Instruction { type_id, args }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSchema {
    name: &'static str,
    types: Vec<InstructionType>,
}

impl InstructionSchema {
    pub fn new(name: &'static str, types: Vec<InstructionType>) -> Result<Self, VmError> {
        for (i, t) in types.iter().enumerate() {
            if types[..i].iter().any(|o| o.name == t.name) {
                return Err(VmError::DuplicateType(t.name));
            }
        }
        Ok(InstructionSchema { name, types })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn types(&self) -> &[InstructionType] {
        &self.types
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn get(&self, type_id: usize) -> Result<&InstructionType, VmError> {
        self.types.get(type_id).ok_or(VmError::UnknownType(type_id))
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn has_pointer_args(&self) -> bool {
        self.types
            .iter()
            .any(|t| t.args.contains(&ArgKind::Pointer))
    }

    /// Sum over types of the per-type argument encoding widths.
    pub fn arg_encoding_width(&self) -> Result<usize, VmError> {
        self.types.iter().map(|t| t.encoding_width()).sum()
    }

    /// Width of [`encode_prev_action`](Self::encode_prev_action): type one-hot,
    /// argument slots for every type, and the trailing none-bit.
    pub fn encoding_width(&self) -> Result<usize, VmError> {
        Ok(self.num_types() + self.arg_encoding_width()? + 1)
    }

    /// Checks arity and argument ranges. Pointer arguments are range-checked
    /// by the owning environment.
    pub fn validate(&self, ins: &Instruction) -> Result<(), VmError> {
        let t = self.get(ins.type_id)?;
        if ins.args.len() != t.arity() {
            return Err(VmError::Arity {
                name: t.name,
                expected: t.arity(),
                got: ins.args.len(),
            });
        }
        for (index, (&value, kind)) in ins.args.iter().zip(&t.args).enumerate() {
            if let Some(cardinality) = kind.cardinality() {
                if value >= cardinality {
                    return Err(VmError::ArgRange {
                        name: t.name,
                        index,
                        value,
                        cardinality,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn encode_prev_action(&self, ins: Option<&Instruction>) -> Result<Vec<f64>, VmError> {
        let mut out = vec![0.0; self.encoding_width()?];
        self.encode_into(ins, &mut out)?;
        Ok(out)
    }

    /// Writes the encoding into `out`, which must be zeroed and exactly
    /// [`encoding_width`](Self::encoding_width) long.
    pub fn encode_into(&self, ins: Option<&Instruction>, out: &mut [f64]) -> Result<(), VmError> {
        let width = self.encoding_width()?;
        debug_assert_eq!(out.len(), width);
        let Some(ins) = ins else {
            out[width - 1] = 1.0;
            return Ok(());
        };
        self.validate(ins)?;
        out[ins.type_id] = 1.0;
        let mut offset = self.num_types();
        for (tid, t) in self.types.iter().enumerate() {
            if tid == ins.type_id {
                let mut o = offset;
                for (&value, kind) in ins.args.iter().zip(&t.args) {
                    match kind {
                        ArgKind::Bool => out[o] = if value == 1 { 1.0 } else { 0.0 },
                        ArgKind::Int(_) => out[o + value] = 1.0,
                        ArgKind::Pointer => return Err(VmError::PointerEncoding),
                    }
                    o += kind.encoding_width().unwrap_or(0);
                }
                break;
            }
            offset += t.encoding_width()?;
        }
        Ok(())
    }

    /// Inverse of [`encode_prev_action`](Self::encode_prev_action).
    pub fn decode_prev_action(&self, enc: &[f64]) -> Result<Option<Instruction>, VmError> {
        let width = self.encoding_width()?;
        if enc.len() != width {
            return Err(VmError::MalformedEncoding(format!(
                "expected width {width}, got {}",
                enc.len()
            )));
        }
        if enc[width - 1] > 0.5 {
            return Ok(None);
        }
        let type_id = argmax_hot(&enc[..self.num_types()])
            .ok_or_else(|| VmError::MalformedEncoding("no type bit set".into()))?;
        let mut offset = self.num_types();
        for t in &self.types[..type_id] {
            offset += t.encoding_width()?;
        }
        let t = &self.types[type_id];
        let mut args = Vec::with_capacity(t.arity());
        for kind in &t.args {
            match *kind {
                ArgKind::Bool => {
                    args.push(usize::from(enc[offset] > 0.5));
                    offset += 1;
                }
                ArgKind::Int(c) => {
                    let v = argmax_hot(&enc[offset..offset + c]).ok_or_else(|| {
                        VmError::MalformedEncoding(format!("{}: empty argument one-hot", t.name))
                    })?;
                    args.push(v);
                    offset += c;
                }
                ArgKind::Pointer => return Err(VmError::PointerEncoding),
            }
        }
        Ok(Some(Instruction::new(type_id, args)))
    }

    /// Number of distinct instructions (pointer-free schemas only).
    pub fn action_count(&self) -> Result<u128, VmError> {
        self.types
            .iter()
            .map(|t| {
                t.args.iter().try_fold(1u128, |acc, k| {
                    k.cardinality()
                        .map(|c| acc * c as u128)
                        .ok_or(VmError::PointerEncoding)
                })
            })
            .sum()
    }

    /// Every valid instruction, in type order then lexicographic argument order.
    pub fn enumerate(&self) -> Result<Vec<Instruction>, VmError> {
        let mut out = Vec::new();
        for (tid, t) in self.types.iter().enumerate() {
            let cards: Vec<usize> = t
                .args
                .iter()
                .map(|k| k.cardinality().ok_or(VmError::PointerEncoding))
                .collect::<Result<_, _>>()?;
            let total: usize = cards.iter().product();
            for mut idx in 0..total {
                let mut args = vec![0usize; cards.len()];
                for p in (0..cards.len()).rev() {
                    args[p] = idx % cards[p];
                    idx /= cards[p];
                }
                out.push(Instruction::new(tid, args));
            }
        }
        Ok(out)
    }

    pub fn display<'a>(&'a self, ins: &'a Instruction) -> DisplayInstruction<'a> {
        DisplayInstruction { schema: self, ins }
    }
}

fn argmax_hot(slice: &[f64]) -> Option<usize> {
    slice.iter().position(|&x| x > 0.5)
}

pub struct DisplayInstruction<'a> {
    schema: &'a InstructionSchema,
    ins: &'a Instruction,
}

impl fmt::Display for DisplayInstruction<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self
            .schema
            .get(self.ins.type_id)
            .map(|t| t.name)
            .unwrap_or("?");
        write!(f, "{name}(")?;
        for (i, a) in self.ins.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Saved caller context for one active function call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStackEntry {
    pub caller_function: Option<usize>,
    /// Always the call instruction that created this entry.
    pub caller_prev_action: Option<Instruction>,
    pub saved_variables: Vec<usize>,
    pub return_targets: Vec<usize>,
}

/// Index variables, current function, previous action and call stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecState {
    pub vars: Vec<usize>,
    pub function_id: Option<usize>,
    pub prev_action: Option<Instruction>,
    pub stack: Vec<CallStackEntry>,
    pub max_depth: usize,
}

impl ExecState {
    pub fn new(vars: Vec<usize>, max_depth: usize) -> Self {
        ExecState {
            vars,
            function_id: None,
            prev_action: None,
            stack: Vec::new(),
            max_depth,
        }
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Enters `function`. Each `(local, outer)` pair assigns the callee's
    /// `local` variable the caller's value of `outer`; every other variable
    /// keeps the caller's value.
    pub fn push_call(
        &mut self,
        call: &Instruction,
        function: usize,
        params: &[(usize, usize)],
        return_targets: &[usize],
    ) -> Result<(), VmError> {
        if self.stack.len() >= self.max_depth {
            return Err(VmError::StackOverflow(self.max_depth));
        }
        let saved = self.vars.clone();
        self.stack.push(CallStackEntry {
            caller_function: self.function_id,
            caller_prev_action: Some(call.clone()),
            saved_variables: saved.clone(),
            return_targets: return_targets.to_vec(),
        });
        for &(local, outer) in params {
            self.vars[local] = saved[outer];
        }
        self.function_id = Some(function);
        self.prev_action = None;
        Ok(())
    }

    /// Leaves the current function, restoring the caller context and then
    /// writing the values of the `returned` locals into the recorded targets.
    pub fn pop_return(&mut self, returned: &[usize]) -> Result<(), VmError> {
        let values: Vec<usize> = returned.iter().map(|&l| self.vars[l]).collect();
        let entry = self.stack.pop().ok_or(VmError::EmptyStack)?;
        if entry.return_targets.len() != values.len() {
            let expected = entry.return_targets.len();
            self.stack.push(entry);
            return Err(VmError::ReturnArity {
                expected,
                got: values.len(),
            });
        }
        self.function_id = entry.caller_function;
        self.prev_action = entry.caller_prev_action;
        self.vars = entry.saved_variables;
        for (&target, value) in entry.return_targets.iter().zip(values) {
            self.vars[target] = value;
        }
        Ok(())
    }
}

/// Variable-size observation for the full-view interface.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphObservation {
    pub num_nodes: usize,
    /// `num_nodes x node_dim`, row-major.
    pub node_features: Vec<f64>,
    pub node_dim: usize,
    /// Directed edges `(src, dst)`.
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Vector(Vec<f64>),
    Graph(GraphObservation),
}

impl Observation {
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Observation::Vector(v) => Some(v),
            Observation::Graph(_) => None,
        }
    }

    pub fn as_graph(&self) -> Option<&GraphObservation> {
        match self {
            Observation::Graph(g) => Some(g),
            Observation::Vector(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Solved,
    BudgetExhausted,
    TerminatedWrong,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub terminal: Option<Outcome>,
}

pub trait Environment {
    fn schema(&self) -> &InstructionSchema;
    fn observe(&self) -> Observation;
    /// Executes one instruction. Errors are reserved for schema violations.
    fn apply(&mut self, ins: &Instruction) -> Result<StepResult, VmError>;
    /// Whether the task already counts as solved before any instruction.
    fn is_solved(&self) -> bool;
    /// Instance size `n`.
    fn size(&self) -> usize;
    /// Human-readable snapshot of the machine state.
    fn render(&self) -> String;
}

/// Anything that maps observations to instructions: scripted teachers and
/// learned policies alike.
pub trait Agent {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Instruction;
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Instruction {
        (**self).act(obs, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub observation: Observation,
    pub instruction: Instruction,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
    pub total_steps: usize,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Episode statistics without stored observations.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub outcome: Outcome,
    pub total_steps: usize,
    pub total_reward: f64,
    /// Instructions issued, per type id.
    pub type_counts: Vec<u64>,
}

fn run_loop(
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    max_steps: usize,
    rng: &mut dyn RngCore,
    mut record: impl FnMut(Observation, &Instruction, f64),
) -> Result<Outcome, VmError> {
    assert!(max_steps >= 1, "max_steps must be positive");
    if env.is_solved() {
        return Ok(Outcome::Solved);
    }
    for _ in 0..max_steps {
        let obs = env.observe();
        let ins = agent.act(&obs, rng);
        env.schema().validate(&ins)?;
        let step = env.apply(&ins)?;
        record(obs, &ins, step.reward);
        if let Some(outcome) = step.terminal {
            return Ok(outcome);
        }
    }
    Ok(Outcome::BudgetExhausted)
}

/// Runs `agent` on a freshly reset `env` and records the full trace.
pub fn run_episode(
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    max_steps: usize,
    rng: &mut dyn RngCore,
) -> Result<EpisodeTrace, VmError> {
    let mut steps = Vec::new();
    let outcome = run_loop(env, agent, max_steps, rng, |observation, ins, reward| {
        steps.push(TraceStep {
            observation,
            instruction: ins.clone(),
            reward,
        })
    })?;
    let total_steps = steps.len();
    Ok(EpisodeTrace {
        steps,
        outcome,
        total_steps,
    })
}

/// Like [`run_episode`] but keeps only aggregate statistics.
pub fn run_episode_summary(
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    max_steps: usize,
    rng: &mut dyn RngCore,
) -> Result<EpisodeSummary, VmError> {
    let mut total_steps = 0;
    let mut total_reward = 0.0;
    let mut type_counts = vec![0u64; env.schema().num_types()];
    let outcome = run_loop(env, agent, max_steps, rng, |_, ins, reward| {
        total_steps += 1;
        total_reward += reward;
        type_counts[ins.type_id] += 1;
    })?;
    Ok(EpisodeSummary {
        outcome,
        total_steps,
        total_reward,
        type_counts,
    })
}

/// One line of an exported trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub instruction: String,
    pub args: Vec<usize>,
    pub reward: f64,
    pub cumulative_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

/// Writes one JSON record per step. `states`, when given, holds the rendered
/// state after each step.
pub fn write_trace<W: Write>(
    trace: &EpisodeTrace,
    schema: &InstructionSchema,
    states: Option<&[String]>,
    out: &mut W,
) -> io::Result<()> {
    let mut cumulative = 0.0;
    for (i, step) in trace.steps.iter().enumerate() {
        cumulative += step.reward;
        let record = TraceRecord {
            step: i,
            instruction: schema
                .get(step.instruction.type_id)
                .map(|t| t.name.to_string())
                .unwrap_or_default(),
            args: step.instruction.args.clone(),
            reward: step.reward,
            cumulative_reward: cumulative,
            state: states.and_then(|s| s.get(i).cloned()),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> InstructionSchema {
        InstructionSchema::new(
            "toy",
            vec![
                InstructionType::new("A", vec![ArgKind::Int(3)]),
                InstructionType::new("B", vec![ArgKind::Int(2), ArgKind::Bool]),
                InstructionType::new("C", vec![]).terminal(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn duplicate_types_rejected() {
        let err = InstructionSchema::new(
            "dup",
            vec![
                InstructionType::new("A", vec![]),
                InstructionType::new("A", vec![]),
            ],
        )
        .unwrap_err();
        assert_eq!(err, VmError::DuplicateType("A"));
    }

    #[test]
    fn encoding_layout() {
        let s = toy_schema();
        assert_eq!(s.encoding_width().unwrap(), 3 + 3 + 3 + 1);
        let enc = s
            .encode_prev_action(Some(&Instruction::new(1, vec![1, 1])))
            .unwrap();
        assert_eq!(enc, vec![0., 1., 0., 0., 0., 0., 0., 1., 1., 0.]);
        let none = s.encode_prev_action(None).unwrap();
        assert_eq!(none.iter().sum::<f64>(), 1.0);
        assert_eq!(none[9], 1.0);
    }

    #[test]
    fn validation_errors() {
        let s = toy_schema();
        assert!(matches!(
            s.validate(&Instruction::new(0, vec![])),
            Err(VmError::Arity { .. })
        ));
        assert!(matches!(
            s.validate(&Instruction::new(0, vec![3])),
            Err(VmError::ArgRange { .. })
        ));
        assert!(matches!(
            s.validate(&Instruction::new(1, vec![0, 2])),
            Err(VmError::ArgRange { .. })
        ));
        assert_eq!(
            s.validate(&Instruction::new(7, vec![])),
            Err(VmError::UnknownType(7))
        );
        assert!(s.encode_prev_action(Some(&Instruction::new(0, vec![5]))).is_err());
    }

    #[test]
    fn enumerate_matches_action_count() {
        let s = toy_schema();
        let all = s.enumerate().unwrap();
        assert_eq!(all.len() as u128, s.action_count().unwrap());
        assert_eq!(all.len(), 3 + 4 + 1);
        for ins in &all {
            s.validate(ins).unwrap();
        }
    }

    #[test]
    fn balanced_calls_restore_variables() {
        let call = Instruction::new(0, vec![]);
        let mut st = ExecState::new(vec![2, 3, 1, 2], 8);
        st.push_call(&call, 0, &[(2, 3), (3, 2)], &[0]).unwrap();
        assert_eq!(st.vars, vec![2, 3, 2, 1]);
        st.push_call(&call, 1, &[(0, 1)], &[1]).unwrap();
        assert_eq!(st.vars, vec![3, 3, 2, 1]);
        st.pop_return(&[1]).unwrap();
        assert_eq!(st.vars, vec![2, 3, 2, 1]);
        st.pop_return(&[2]).unwrap();
        // target 0 receives the callee's variable 2 (=2); the rest are restored
        assert_eq!(st.vars, vec![2, 3, 1, 2]);
        assert_eq!(st.function_id, None);
        assert_eq!(st.prev_action, Some(call));
    }

    #[test]
    fn stack_limits() {
        let call = Instruction::new(0, vec![]);
        let mut st = ExecState::new(vec![], 1);
        st.push_call(&call, 0, &[], &[]).unwrap();
        assert_eq!(
            st.push_call(&call, 0, &[], &[]),
            Err(VmError::StackOverflow(1))
        );
        st.pop_return(&[]).unwrap();
        assert_eq!(st.pop_return(&[]), Err(VmError::EmptyStack));
    }
}
