//! Task descriptors: which machine to build for a size, and step caps.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::knapsack::{KnapsackEnv, KnapsackInstance};
use crate::search::{QueryMode, SearchEnv, SearchRewardConfig, SearchState};
use crate::sort::{RewardConfig, SortEnv, SortInterface, SortState};
use crate::vm::{Environment, InstructionSchema};

/// Looks up a built-in schema by its name.
pub fn schema_by_name(name: &str) -> Option<&'static InstructionSchema> {
    [
        crate::sort::bubble_insertion_schema(),
        crate::sort::quicksort_schema(),
        crate::sort::full_view_schema(),
        crate::search::search_schema(),
        crate::knapsack::knapsack_schema(),
    ]
    .into_iter()
    .find(|s| s.name() == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "task")]
pub enum Task {
    Sort {
        interface: SortInterface,
        reward: RewardConfig,
    },
    Search {
        mode: QueryMode,
        reward: SearchRewardConfig,
    },
    Knapsack,
}

impl Task {
    pub fn sort(interface: SortInterface) -> Self {
        Task::Sort {
            interface,
            reward: RewardConfig::default(),
        }
    }

    pub fn search(mode: QueryMode) -> Self {
        Task::Search {
            mode,
            reward: SearchRewardConfig::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Sort { .. } => "sort",
            Task::Search { .. } => "search",
            Task::Knapsack => "knapsack",
        }
    }

    pub fn schema(&self) -> &'static InstructionSchema {
        match self {
            Task::Sort { interface, .. } => interface.schema(),
            Task::Search { .. } => crate::search::search_schema(),
            Task::Knapsack => crate::knapsack::knapsack_schema(),
        }
    }

    /// Width of vector observations; `None` for graph observations.
    pub fn observation_width(&self) -> Option<usize> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        self.make_env(2, &mut rng).observe().as_vector().map(<[f64]>::len)
    }

    /// Fresh random instance of size `n`.
    pub fn make_env<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Box<dyn Environment + Send> {
        match *self {
            Task::Sort { interface, reward } => {
                Box::new(SortEnv::new(interface, SortState::random(n, rng), reward))
            }
            Task::Search { mode, reward } => {
                Box::new(SearchEnv::new(SearchState::random(n, mode, rng), reward))
            }
            Task::Knapsack => Box::new(KnapsackEnv::new(KnapsackInstance::random(n, rng))),
        }
    }

    /// One-line text form of a fresh instance, as written by `gen`.
    pub fn instance_line<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> String {
        match *self {
            Task::Sort { .. } => SortState::random(n, rng).to_line(),
            Task::Search { mode, .. } => SearchState::random(n, mode, rng).to_line(),
            Task::Knapsack => KnapsackInstance::random(n, rng).to_line(),
        }
    }
}

/// Maximum number of instructions per episode as a function of size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapRule {
    /// `n^2`
    Squared,
    /// `10 n^2`
    TenSquared,
    Absolute(usize),
    /// `m n`
    PerSize(usize),
    Unlimited,
}

impl CapRule {
    pub fn cap(self, n: usize) -> usize {
        match self {
            CapRule::Squared => (n * n).max(1),
            CapRule::TenSquared => (10 * n * n).max(1),
            CapRule::Absolute(k) => k.max(1),
            CapRule::PerSize(m) => (m * n).max(1),
            CapRule::Unlimited => usize::MAX,
        }
    }
}

impl fmt::Display for CapRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CapRule::Squared => write!(f, "n^2"),
            CapRule::TenSquared => write!(f, "10n^2"),
            CapRule::Absolute(k) => write!(f, "{k}"),
            CapRule::PerSize(m) => write!(f, "{m}n"),
            CapRule::Unlimited => write!(f, "unlimited"),
        }
    }
}

impl FromStr for CapRule {
    type Err = String;
    /// Accepts `n^2`, `10n^2`, `unlimited`, `<m>n` and plain integers.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "n^2" | "n2" | "squared" => return Ok(CapRule::Squared),
            "10n^2" | "10n2" => return Ok(CapRule::TenSquared),
            "unlimited" | "none" => return Ok(CapRule::Unlimited),
            _ => {}
        }
        if let Some(m) = s.strip_suffix('n') {
            return m
                .parse()
                .map(CapRule::PerSize)
                .map_err(|_| format!("bad cap rule `{s}`"));
        }
        s.parse()
            .map(CapRule::Absolute)
            .map_err(|_| format!("bad cap rule `{s}`"))
    }
}
