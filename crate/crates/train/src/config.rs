//! Training configuration as a flat `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys and unparsable values are errors.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use npi_core::search::{QueryMode, SearchRewardConfig};
use npi_core::sort::{RewardConfig, RewardMode, SortInterface};
use npi_core::teachers::Teacher;
use npi_core::Task;
use npi_neural::{AnyPolicy, GnnConfig, GnnPolicy, MlpConfig, MlpPolicy, NeuralError, ValueBaseline};
use rand::RngCore;

use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Sort,
    Search,
    Knapsack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Gnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Scalar,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub interface: SortInterface,
    pub query_mode: QueryMode,
    pub reward: RewardMode,
    pub step_penalty: f64,
    pub teacher: Teacher,
    pub model: ModelKind,
    pub trunk_layers: usize,
    pub hidden_width: usize,
    pub head_hidden: usize,
    pub gnn_rounds: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub episode_cap: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub n_steps: usize,
    pub baseline_weight: f64,
    pub baseline: BaselineKind,
    pub imitation: bool,
    pub imitation_weight: f64,
    pub actors: usize,
    pub updates: usize,
    pub bc_learning_rate: f64,
    pub bc_epochs: usize,
    pub bc_episodes: usize,
    pub bc_batch: usize,
    pub bc_patience: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Sort,
            interface: SortInterface::BubbleInsertion,
            query_mode: QueryMode::Dense,
            reward: RewardMode::Sparse,
            step_penalty: 0.01,
            teacher: Teacher::Insertion,
            model: ModelKind::Mlp,
            trunk_layers: 3,
            hidden_width: 64,
            head_hidden: 64,
            gnn_rounds: 5,
            min_size: 10,
            max_size: 20,
            episode_cap: 400,
            learning_rate: 1e-4,
            gamma: 0.99,
            entropy_weight: 0.0,
            n_steps: 80,
            baseline_weight: 1e-3,
            baseline: BaselineKind::Scalar,
            imitation: true,
            imitation_weight: 1e-3,
            actors: 16,
            updates: 1000,
            bc_learning_rate: 1e-3,
            bc_epochs: 300,
            bc_episodes: 32,
            bc_batch: 32,
            bc_patience: 5,
            eval_every: 50,
            eval_episodes: 100,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .parse()
        .map_err(|_| TrainError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_with<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, TrainError> {
    f(value).ok_or_else(|| TrainError::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value.trim();
        match key.trim() {
            "task" => {
                self.task = parse_with(key, v, |s| match s {
                    "sort" => Some(TaskKind::Sort),
                    "search" => Some(TaskKind::Search),
                    "knapsack" => Some(TaskKind::Knapsack),
                    _ => None,
                })?
            }
            "interface" => self.interface = parse_with(key, v, |s| s.parse().ok())?,
            "query_mode" => self.query_mode = parse_with(key, v, |s| s.parse().ok())?,
            "reward" => self.reward = parse_with(key, v, |s| s.parse().ok())?,
            "step_penalty" => self.step_penalty = parse(key, v)?,
            "teacher" => self.teacher = parse_with(key, v, |s| s.parse().ok())?,
            "model" => {
                self.model = parse_with(key, v, |s| match s {
                    "mlp" => Some(ModelKind::Mlp),
                    "gnn" => Some(ModelKind::Gnn),
                    _ => None,
                })?
            }
            "trunk_layers" => self.trunk_layers = parse(key, v)?,
            "hidden_width" => self.hidden_width = parse(key, v)?,
            "head_hidden" => self.head_hidden = parse(key, v)?,
            "gnn_rounds" => self.gnn_rounds = parse(key, v)?,
            "min_size" => self.min_size = parse(key, v)?,
            "max_size" => self.max_size = parse(key, v)?,
            "episode_cap" => self.episode_cap = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "entropy_weight" => self.entropy_weight = parse(key, v)?,
            "n_steps" => self.n_steps = parse(key, v)?,
            "baseline_weight" => self.baseline_weight = parse(key, v)?,
            "baseline" => {
                self.baseline = parse_with(key, v, |s| match s {
                    "scalar" => Some(BaselineKind::Scalar),
                    "linear" => Some(BaselineKind::Linear),
                    _ => None,
                })?
            }
            "imitation" => self.imitation = parse(key, v)?,
            "imitation_weight" => self.imitation_weight = parse(key, v)?,
            "actors" => self.actors = parse(key, v)?,
            "updates" => self.updates = parse(key, v)?,
            "bc_learning_rate" => self.bc_learning_rate = parse(key, v)?,
            "bc_epochs" => self.bc_epochs = parse(key, v)?,
            "bc_episodes" => self.bc_episodes = parse(key, v)?,
            "bc_batch" => self.bc_batch = parse(key, v)?,
            "bc_patience" => self.bc_patience = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(TrainError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| TrainError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.min_size < 2 || self.min_size > self.max_size {
            return fail("sizes need 2 <= min_size <= max_size");
        }
        if self.n_steps == 0 || self.actors == 0 || self.episode_cap == 0 {
            return fail("n_steps, actors and episode_cap must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if self.bc_batch == 0 || self.bc_episodes == 0 {
            return fail("bc_batch and bc_episodes must be positive");
        }
        let graph = self.task == TaskKind::Sort && self.interface == SortInterface::FullView;
        if graph != (self.model == ModelKind::Gnn) {
            return fail("the full-view interface needs model = gnn, every other task model = mlp");
        }
        if graph && self.baseline == BaselineKind::Linear {
            return fail("a linear baseline needs vector observations");
        }
        Ok(())
    }

    pub fn build_task(&self) -> Task {
        match self.task {
            TaskKind::Sort => Task::Sort {
                interface: self.interface,
                reward: RewardConfig {
                    mode: self.reward,
                    step_penalty: self.step_penalty,
                },
            },
            TaskKind::Search => Task::Search {
                mode: self.query_mode,
                reward: SearchRewardConfig {
                    step_penalty: self.step_penalty,
                    wrong_penalty: None,
                },
            },
            TaskKind::Knapsack => Task::Knapsack,
        }
    }

    /// Fresh policy with uniform initial action distribution.
    pub fn build_policy(&self, rng: &mut dyn RngCore) -> Result<AnyPolicy, NeuralError> {
        let task = self.build_task();
        match self.model {
            ModelKind::Mlp => {
                let width = task.observation_width().ok_or_else(|| {
                    NeuralError::Unsupported("MLP policy needs vector observations".into())
                })?;
                let cfg = MlpConfig {
                    trunk_layers: self.trunk_layers,
                    width: self.hidden_width,
                    head_hidden: self.head_hidden,
                };
                Ok(AnyPolicy::Mlp(MlpPolicy::new(task.schema(), width, cfg, rng)?))
            }
            ModelKind::Gnn => {
                let cfg = GnnConfig {
                    rounds: self.gnn_rounds,
                    ..GnnConfig::default()
                };
                Ok(AnyPolicy::Gnn(GnnPolicy::new(task.schema(), 1, cfg, rng)?))
            }
        }
    }

    pub fn build_baseline(&self) -> ValueBaseline {
        match self.baseline {
            BaselineKind::Scalar => ValueBaseline::default(),
            BaselineKind::Linear => {
                ValueBaseline::linear(self.build_task().observation_width().unwrap_or(0))
            }
        }
    }

    /// Settings outside the standard sweep grid.
    pub fn off_grid(&self) -> Vec<String> {
        let mut out = Vec::new();
        let sorting_interface = self.task == TaskKind::Sort && self.interface != SortInterface::FullView;
        if ![1e-4, 1e-5].contains(&self.learning_rate) {
            out.push(format!("learning_rate {} not in {{1e-4, 1e-5}}", self.learning_rate));
        }
        let gammas: &[f64] = if sorting_interface { &[0.99, 0.999] } else { &[0.9, 0.99] };
        if !gammas.contains(&self.gamma) {
            out.push(format!("gamma {} not in {gammas:?}", self.gamma));
        }
        if ![0.0, 1e-3].contains(&self.entropy_weight) {
            out.push(format!("entropy_weight {} not in {{0, 1e-3}}", self.entropy_weight));
        }
        let steps: &[usize] = if sorting_interface { &[80, 160, 320] } else { &[50] };
        if !steps.contains(&self.n_steps) {
            out.push(format!("n_steps {} not in {steps:?}", self.n_steps));
        }
        if self.baseline_weight != 1e-3 {
            out.push(format!("baseline_weight {} is not 1e-3", self.baseline_weight));
        }
        out
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Sort => "sort",
            TaskKind::Search => "search",
            TaskKind::Knapsack => "knapsack",
        })
    }
}

/// Writes every key, so the output reproduces the configuration exactly.
impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let model = match self.model {
            ModelKind::Mlp => "mlp",
            ModelKind::Gnn => "gnn",
        };
        let baseline = match self.baseline {
            BaselineKind::Scalar => "scalar",
            BaselineKind::Linear => "linear",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("task", self.task.to_string()),
            ("interface", self.interface.to_string()),
            ("query_mode", self.query_mode.to_string()),
            ("reward", self.reward.to_string()),
            ("step_penalty", format!("{:?}", self.step_penalty)),
            ("teacher", self.teacher.to_string()),
            ("model", model.into()),
            ("trunk_layers", self.trunk_layers.to_string()),
            ("hidden_width", self.hidden_width.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("gnn_rounds", self.gnn_rounds.to_string()),
            ("min_size", self.min_size.to_string()),
            ("max_size", self.max_size.to_string()),
            ("episode_cap", self.episode_cap.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("gamma", format!("{:?}", self.gamma)),
            ("entropy_weight", format!("{:?}", self.entropy_weight)),
            ("n_steps", self.n_steps.to_string()),
            ("baseline_weight", format!("{:?}", self.baseline_weight)),
            ("baseline", baseline.into()),
            ("imitation", self.imitation.to_string()),
            ("imitation_weight", format!("{:?}", self.imitation_weight)),
            ("actors", self.actors.to_string()),
            ("updates", self.updates.to_string()),
            ("bc_learning_rate", format!("{:?}", self.bc_learning_rate)),
            ("bc_epochs", self.bc_epochs.to_string()),
            ("bc_episodes", self.bc_episodes.to_string()),
            ("bc_batch", self.bc_batch.to_string()),
            ("bc_patience", self.bc_patience.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in pairs {
            writeln!(s, "{k} = {v}")?;
        }
        f.write_str(&s)
    }
}
