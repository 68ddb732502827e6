//! Small neural policies over structured instruction sets, with exact
//! hand-derived gradients.
//!
//! A policy factorizes an instruction's probability into its type and then
//! each argument in order, every factor conditioned on the choices before
//! it. Parameters live in one flat vector per model so optimizers,
//! snapshots and checkpoints treat every model alike.

pub mod adam;
pub mod baseline;
pub mod checkpoint;
pub mod dense;
pub mod dist;
pub mod gnn;
pub mod gradcheck;
pub mod mlp;

use std::io;
use std::path::Path;

use npi_core::vm::{Agent, Instruction, InstructionSchema, Observation, VmError};
use rand::RngCore;
use thiserror::Error;

pub use adam::Adam;
pub use baseline::ValueBaseline;
pub use checkpoint::Checkpoint;
pub use gnn::{GnnConfig, GnnPolicy};
pub use mlp::{MlpConfig, MlpPolicy};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("observation shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decode {
    Sample,
    /// Argmax at every factor.
    Greedy,
}

/// One objective contribution: `log_prob_weight * log p(action)` plus
/// `entropy_weight` times the summed entropies of the factors along the
/// action's path.
#[derive(Debug, Clone, Copy)]
pub struct Term<'a> {
    pub action: &'a Instruction,
    pub log_prob_weight: f64,
    pub entropy_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermStats {
    pub log_prob: f64,
    pub entropy: f64,
}

pub trait Policy: Send + Sync {
    fn schema(&self) -> &'static InstructionSchema;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn log_prob(&self, obs: &Observation, action: &Instruction) -> Result<f64, NeuralError>;
    fn act(
        &self,
        obs: &Observation,
        decode: Decode,
        rng: &mut dyn RngCore,
    ) -> Result<Instruction, NeuralError>;
    /// Adds the parameter gradient of every term's objective into `grads`.
    fn accumulate(
        &self,
        obs: &Observation,
        terms: &[Term<'_>],
        grads: &mut [f64],
    ) -> Result<Vec<TermStats>, NeuralError>;
    fn to_checkpoint(&self) -> Checkpoint;
}

/// Either policy family, chosen at load time.
#[derive(Debug, Clone)]
pub enum AnyPolicy {
    Mlp(MlpPolicy),
    Gnn(GnnPolicy),
}

impl AnyPolicy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NeuralError> {
        match ck.kind.as_str() {
            mlp::KIND => Ok(AnyPolicy::Mlp(MlpPolicy::from_checkpoint(ck)?)),
            gnn::KIND => Ok(AnyPolicy::Gnn(GnnPolicy::from_checkpoint(ck)?)),
            other => Err(NeuralError::Checkpoint(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    fn inner(&self) -> &dyn Policy {
        match self {
            AnyPolicy::Mlp(p) => p,
            AnyPolicy::Gnn(p) => p,
        }
    }
}

impl Policy for AnyPolicy {
    fn schema(&self) -> &'static InstructionSchema {
        self.inner().schema()
    }
    fn params(&self) -> &[f64] {
        self.inner().params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnyPolicy::Mlp(p) => p.params_mut(),
            AnyPolicy::Gnn(p) => p.params_mut(),
        }
    }
    fn log_prob(&self, obs: &Observation, action: &Instruction) -> Result<f64, NeuralError> {
        self.inner().log_prob(obs, action)
    }
    fn act(
        &self,
        obs: &Observation,
        decode: Decode,
        rng: &mut dyn RngCore,
    ) -> Result<Instruction, NeuralError> {
        self.inner().act(obs, decode, rng)
    }
    fn accumulate(
        &self,
        obs: &Observation,
        terms: &[Term<'_>],
        grads: &mut [f64],
    ) -> Result<Vec<TermStats>, NeuralError> {
        self.inner().accumulate(obs, terms, grads)
    }
    fn to_checkpoint(&self) -> Checkpoint {
        self.inner().to_checkpoint()
    }
}

/// Drives an environment with a policy. Observations that do not fit the
/// policy are programming errors and panic.
pub struct PolicyAgent<'a, P: Policy + ?Sized> {
    pub policy: &'a P,
    pub decode: Decode,
}

impl<'a, P: Policy + ?Sized> PolicyAgent<'a, P> {
    pub fn greedy(policy: &'a P) -> Self {
        PolicyAgent {
            policy,
            decode: Decode::Greedy,
        }
    }

    pub fn sampling(policy: &'a P) -> Self {
        PolicyAgent {
            policy,
            decode: Decode::Sample,
        }
    }
}

impl<P: Policy + ?Sized> Agent for PolicyAgent<'_, P> {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Instruction {
        self.policy
            .act(obs, self.decode, rng)
            .expect("observation matches the policy")
    }
}
