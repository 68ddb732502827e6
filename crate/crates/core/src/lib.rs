//! Instruction-set machines for sorting, ordered search and 0/1 knapsack,
//! their scripted teachers and the evaluation bench.

pub mod bench;
pub mod features;
pub mod knapsack;
pub mod search;
pub mod sort;
pub mod task;
pub mod teachers;
pub mod vm;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("malformed instance line: {0}")]
    Parse(String),
    #[error("invalid instance: {0}")]
    Range(String),
}

pub use task::{CapRule, Task};
pub use vm::{Agent, Environment, Instruction, InstructionSchema, Observation, Outcome};
