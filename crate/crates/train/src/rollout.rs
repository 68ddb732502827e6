//! Actors that step environments with a policy snapshot and record
//! fixed-length segments.

use npi_core::teachers::Teacher;
use npi_core::vm::{Environment, Instruction, Observation, Outcome};
use npi_core::Task;
use npi_neural::{Decode, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::TrainError;

/// Supplies fresh training instances.
pub trait EnvSource: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Box<dyn Environment + Send>;
}

/// Instances of `task` with size uniform in `[min_size, max_size]`.
#[derive(Debug, Clone, Copy)]
pub struct TaskSource {
    pub task: Task,
    pub min_size: usize,
    pub max_size: usize,
}

impl EnvSource for TaskSource {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Box<dyn Environment + Send> {
        let n = rng.gen_range(self.min_size..=self.max_size);
        self.task.make_env(n, rng)
    }
}

impl<F> EnvSource for F
where
    F: Fn(&mut ChaCha8Rng) -> Box<dyn Environment + Send> + Sync,
{
    fn sample(&self, rng: &mut ChaCha8Rng) -> Box<dyn Environment + Send> {
        self(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    pub solved: bool,
    pub length: usize,
    pub total_reward: f64,
}

/// Consecutive steps of one actor. `done[t]` marks an episode ending at
/// step `t`; `bootstrap` is the state after the last step unless it ended.
#[derive(Debug, Clone, Default)]
pub struct Segment {
    pub observations: Vec<Observation>,
    pub actions: Vec<Instruction>,
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
    /// Teacher's choice at each visited state; empty without imitation.
    pub teacher_actions: Vec<Instruction>,
    pub bootstrap: Option<Observation>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub segments: Vec<Segment>,
    /// Episodes that finished while collecting this batch.
    pub episodes: Vec<EpisodeStat>,
}

impl RolloutBatch {
    pub fn steps(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }
}

pub struct Actor {
    env: Box<dyn Environment + Send>,
    rng: ChaCha8Rng,
    steps: usize,
    total_reward: f64,
}

const RESET_ATTEMPTS: usize = 64;

impl Actor {
    pub fn new(source: &dyn EnvSource, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = fresh(source, &mut rng);
        Actor {
            env,
            rng,
            steps: 0,
            total_reward: 0.0,
        }
    }

    /// Runs `n_steps` steps, resetting after each finished episode; an
    /// episode also finishes after `cap` steps.
    pub fn collect<P: Policy + ?Sized>(
        &mut self,
        policy: &P,
        source: &dyn EnvSource,
        n_steps: usize,
        cap: usize,
        teacher: Option<Teacher>,
    ) -> Result<(Segment, Vec<EpisodeStat>), TrainError> {
        let mut seg = Segment::default();
        let mut finished = Vec::new();
        let mut last_done = false;
        for _ in 0..n_steps {
            let obs = self.env.observe();
            let action = policy.act(&obs, Decode::Sample, &mut self.rng)?;
            if let Some(t) = teacher {
                seg.teacher_actions.push(t.decide(&obs));
            }
            let res = self.env.apply(&action)?;
            self.steps += 1;
            self.total_reward += res.reward;
            let done = res.terminal.is_some() || self.steps >= cap;
            seg.observations.push(obs);
            seg.actions.push(action);
            seg.rewards.push(res.reward);
            seg.done.push(done);
            if done {
                finished.push(EpisodeStat {
                    solved: res.terminal == Some(Outcome::Solved),
                    length: self.steps,
                    total_reward: self.total_reward,
                });
                self.env = fresh(source, &mut self.rng);
                self.steps = 0;
                self.total_reward = 0.0;
            }
            last_done = done;
        }
        seg.bootstrap = (!last_done).then(|| self.env.observe());
        Ok((seg, finished))
    }
}

/// An instance that is not already solved, when one turns up.
fn fresh(source: &dyn EnvSource, rng: &mut ChaCha8Rng) -> Box<dyn Environment + Send> {
    let mut env = source.sample(rng);
    for _ in 0..RESET_ATTEMPTS {
        if !env.is_solved() {
            break;
        }
        env = source.sample(rng);
    }
    env
}

/// Collects one segment per actor in parallel; the result does not depend
/// on the number of threads.
pub fn collect_batch<P: Policy + ?Sized>(
    actors: &mut [Actor],
    policy: &P,
    source: &dyn EnvSource,
    n_steps: usize,
    cap: usize,
    teacher: Option<Teacher>,
) -> Result<RolloutBatch, TrainError> {
    let parts: Vec<(Segment, Vec<EpisodeStat>)> = actors
        .par_iter_mut()
        .map(|a| a.collect(policy, source, n_steps, cap, teacher))
        .collect::<Result<_, _>>()?;
    let mut batch = RolloutBatch::default();
    for (seg, eps) in parts {
        batch.segments.push(seg);
        batch.episodes.extend(eps);
    }
    Ok(batch)
}
