//! Hyperparameter sweeps ranked by greedy validation.

use std::path::{Path, PathBuf};

use npi_neural::{AnyPolicy, Policy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::rl::{train_rl, validate};
use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub n_steps: usize,
}

/// Cartesian product in lexicographic order of the arguments.
pub fn grid(lrs: &[f64], gammas: &[f64], entropies: &[f64], n_steps: &[usize]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &learning_rate in lrs {
        for &gamma in gammas {
            for &entropy_weight in entropies {
                for &n in n_steps {
                    out.push(GridPoint {
                        learning_rate,
                        gamma,
                        entropy_weight,
                        n_steps: n,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub cell: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub solve_rate: f64,
    pub mean_length: f64,
    /// Set on the best run of each cell when checkpoints are persisted.
    pub checkpoint: Option<PathBuf>,
}

/// Trains every (cell, seed) pair for `updates` steps, starting from
/// `init` or a fresh policy, and ranks runs by validation solve rate, then
/// mean length.
pub fn run_sweep(
    base: &TrainConfig,
    points: &[GridPoint],
    seeds: &[u64],
    updates: usize,
    init: Option<&AnyPolicy>,
    out_dir: Option<&Path>,
) -> Result<Vec<LeaderboardRow>, TrainError> {
    let mut rows = Vec::new();
    for (cell, p) in points.iter().enumerate() {
        let mut best: Option<(usize, AnyPolicy)> = None;
        for &seed in seeds {
            let cfg = TrainConfig {
                learning_rate: p.learning_rate,
                gamma: p.gamma,
                entropy_weight: p.entropy_weight,
                n_steps: p.n_steps,
                updates,
                eval_every: 0,
                seed,
                ..base.clone()
            };
            let mut policy = match init {
                Some(pol) => pol.clone(),
                None => cfg.build_policy(&mut ChaCha8Rng::seed_from_u64(seed))?,
            };
            train_rl(&mut policy, &cfg, None)?;
            let (v, _) = validate(&policy, &cfg)?;
            rows.push(LeaderboardRow {
                rank: 0,
                cell,
                learning_rate: p.learning_rate,
                gamma: p.gamma,
                entropy_weight: p.entropy_weight,
                n_steps: p.n_steps,
                seed,
                solve_rate: v.solve_rate,
                mean_length: v.mean_length,
                checkpoint: None,
            });
            let idx = rows.len() - 1;
            let better = match &best {
                None => true,
                Some((b, _)) => ranks_before(&rows[idx], &rows[*b]),
            };
            if better {
                best = Some((idx, policy));
            }
        }
        if let (Some(dir), Some((idx, policy))) = (out_dir, best) {
            let path = dir.join(format!("cell{cell}.ckpt"));
            policy.to_checkpoint().save(&path)?;
            rows[idx].checkpoint = Some(path);
        }
    }
    rows.sort_by(|a, b| {
        b.solve_rate
            .total_cmp(&a.solve_rate)
            .then(a.mean_length.total_cmp(&b.mean_length))
            .then(a.cell.cmp(&b.cell))
            .then(a.seed.cmp(&b.seed))
    });
    for (k, r) in rows.iter_mut().enumerate() {
        r.rank = k + 1;
    }
    Ok(rows)
}

fn ranks_before(a: &LeaderboardRow, b: &LeaderboardRow) -> bool {
    a.solve_rate > b.solve_rate || (a.solve_rate == b.solve_rate && a.mean_length < b.mean_length)
}

pub fn write_leaderboard<W: std::io::Write>(rows: &[LeaderboardRow], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
