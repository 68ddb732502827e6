//! Behavior cloning and n-step policy gradient with imitation for the
//! neural policies, plus sweeps and the self-check suites.

pub mod bc;
pub mod config;
pub mod log;
pub mod pg;
pub mod returns;
pub mod rl;
pub mod rollout;
pub mod sweep;
pub mod verify;

use thiserror::Error;

pub use config::TrainConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] npi_neural::NeuralError),
    #[error(transparent)]
    Vm(#[from] npi_core::vm::VmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
