//! Evaluation protocol and analytical oracles.

use std::collections::BTreeMap;
use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sort::SortInterface;
use crate::task::{CapRule, Task};
use crate::vm::{
    run_episode_summary, Agent, EpisodeSummary, EpisodeTrace, Environment, Outcome, VmError,
};

/// Seed for one episode, independent of evaluation order.
pub fn episode_seed(seed: u64, size: usize, episode: usize) -> u64 {
    let mut z = seed;
    for x in [size as u64, episode as u64] {
        z = splitmix64(z ^ splitmix64(x.wrapping_add(0x6a09_e667_f3bc_c909)));
    }
    z
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub agent: String,
    pub size: usize,
    pub episodes: usize,
    pub solved: usize,
    pub solve_rate: f64,
    pub mean_length: f64,
    pub mean_reward: f64,
    pub cap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, agent: &str, size: usize) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.agent == agent && r.size == size)
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    /// One CSV record per (agent, size).
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Agents as rows, sizes as columns, cells `mean-length/solve%`.
    pub fn write_table_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut sizes: Vec<usize> = self.rows.iter().map(|r| r.size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let mut agents: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !agents.contains(&r.agent.as_str()) {
                agents.push(&r.agent);
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["agent".to_string()];
        header.extend(sizes.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for a in agents {
            let mut rec = vec![a.to_string()];
            for &s in &sizes {
                rec.push(match self.row(a, s) {
                    Some(r) => format!("{:.1}/{:.0}", r.mean_length, r.solve_rate),
                    None => String::new(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-episode outcomes for one size.
pub fn run_size<A, F>(
    make_agent: &F,
    task: &Task,
    size: usize,
    episodes: usize,
    cap: usize,
    seed: u64,
) -> Result<Vec<EpisodeSummary>, VmError>
where
    A: Agent,
    F: Fn() -> A + Sync,
{
    (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, size, e));
            let mut env = task.make_env(size, &mut rng);
            let mut agent = make_agent();
            run_episode_summary(env.as_mut(), &mut agent, cap, &mut rng)
        })
        .collect()
}

pub fn summarize(
    agent: &str,
    size: usize,
    cap: usize,
    seed: u64,
    results: &[EpisodeSummary],
) -> EvalRow {
    let episodes = results.len();
    let solved = results
        .iter()
        .filter(|r| r.outcome == Outcome::Solved)
        .count();
    let denom = episodes.max(1) as f64;
    EvalRow {
        agent: agent.to_string(),
        size,
        episodes,
        solved,
        solve_rate: 100.0 * solved as f64 / denom,
        mean_length: results.iter().map(|r| r.total_steps as f64).sum::<f64>() / denom,
        mean_reward: results.iter().map(|r| r.total_reward).sum::<f64>() / denom,
        cap,
        seed,
    }
}

/// Runs `episodes` fresh instances per size. Instances depend only on
/// `(seed, size, episode)`, so different agents see the same instances.
pub fn evaluate<A, F>(
    agent: &str,
    make_agent: F,
    task: &Task,
    sizes: &[usize],
    episodes: usize,
    cap_rule: CapRule,
    seed: u64,
) -> Result<EvalReport, VmError>
where
    A: Agent,
    F: Fn() -> A + Sync,
{
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let cap = cap_rule.cap(size);
        let results = run_size(&make_agent, task, size, episodes, cap, seed)?;
        rows.push(summarize(agent, size, cap, seed, &results));
    }
    Ok(EvalReport { rows })
}

/// Pairs `i < j` with `a[i] > a[j]`, by merge counting.
pub fn inversion_count<T: Ord + Clone>(a: &[T]) -> u64 {
    fn rec<T: Ord + Clone>(a: &mut [T], buf: &mut Vec<T>) -> u64 {
        let n = a.len();
        if n < 2 {
            return 0;
        }
        let mid = n / 2;
        let mut count = rec(&mut a[..mid], buf) + rec(&mut a[mid..], buf);
        buf.clear();
        let (mut i, mut j) = (0, mid);
        while i < mid && j < n {
            if a[j] < a[i] {
                count += (mid - i) as u64;
                buf.push(a[j].clone());
                j += 1;
            } else {
                buf.push(a[i].clone());
                i += 1;
            }
        }
        buf.extend_from_slice(&a[i..mid]);
        buf.extend_from_slice(&a[j..]);
        a.clone_from_slice(buf);
        count
    }
    let mut v = a.to_vec();
    rec(&mut v, &mut Vec::with_capacity(a.len()))
}

/// Adjacent swaps needed to sort `a`.
pub fn min_swaps_lower_bound<T: Ord + Clone>(a: &[T]) -> u64 {
    inversion_count(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub actions: u128,
    /// Estimated number of distinct observations.
    pub states: f64,
}

/// Instruction count and observation-space estimate for `k` variables.
pub fn search_space_size(interface: SortInterface, k: usize) -> Option<SearchSpace> {
    let k128 = k as u128;
    let base = k128 + 2 * k128 + k128 * k128;
    let pairs = (k * k.saturating_sub(1) / 2) as i32;
    let interface_states = 9f64.powi(pairs) * 16f64.powi(k as i32);
    match interface {
        SortInterface::BubbleInsertion => Some(SearchSpace {
            actions: base,
            states: interface_states,
        }),
        SortInterface::QuickSort => {
            let functions = 2u128;
            let calls = functions * k128.pow(5);
            let width = crate::features::comparison_width(k) + 3 + 6 + 1
                + (k + (k + 1) + 2 * k + (2 + 5 * k) + k + 2 * k);
            Some(SearchSpace {
                actions: base + calls + k128 + k128 * k128,
                states: 2f64.powi(width as i32),
            })
        }
        SortInterface::FullView => None,
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace does not match instance: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Vm(#[from] VmError),
}

/// Replays `trace` on `env` (freshly reset) and returns one frame for the
/// reset state plus one per step.
pub fn render_trace(
    trace: &EpisodeTrace,
    env: &mut dyn Environment,
) -> Result<Vec<String>, TraceError> {
    const LOG: usize = 6;
    if let Some(first) = trace.steps.first() {
        if first.observation != env.observe() {
            return Err(TraceError::Mismatch(
                "initial observation differs from the instance".into(),
            ));
        }
    }
    let schema = env.schema().clone();
    let mut frames = vec![format!("step 0 (reset)\n{}", env.render())];
    let mut log: Vec<String> = Vec::new();
    let mut cumulative = 0.0;
    for (t, step) in trace.steps.iter().enumerate() {
        if t > 0 && step.observation != env.observe() {
            return Err(TraceError::Mismatch(format!("observation differs at step {t}")));
        }
        let res = env.apply(&step.instruction)?;
        if (res.reward - step.reward).abs() > 1e-9 {
            return Err(TraceError::Mismatch(format!(
                "reward {} recorded, {} replayed at step {t}",
                step.reward, res.reward
            )));
        }
        cumulative += res.reward;
        log.push(schema.display(&step.instruction).to_string());
        let start = log.len().saturating_sub(LOG);
        frames.push(format!(
            "step {}: {}  reward {:.3}  total {:.3}\n{}log: {}\n",
            t + 1,
            log[log.len() - 1],
            res.reward,
            cumulative,
            env.render(),
            log[start..].join(" | ")
        ));
    }
    Ok(frames)
}

/// Instruction counts per type name, summed over episodes.
pub fn type_histogram(
    schema: &crate::vm::InstructionSchema,
    results: &[EpisodeSummary],
) -> BTreeMap<&'static str, u64> {
    let mut h = BTreeMap::new();
    for r in results {
        for (t, &c) in r.type_counts.iter().enumerate() {
            *h.entry(schema.types()[t].name).or_insert(0) += c;
        }
    }
    h
}
