//! Search in a sorted array through four index variables.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::{comparison_width, write_comparison_features};
use crate::sort::VAR_NAMES;
use crate::vm::{
    ArgKind, Environment, Instruction, InstructionSchema, InstructionType, Observation, Outcome,
    StepResult, VmError,
};
use crate::InstanceError;

pub const NUM_VARS: usize = 4;
/// 68 comparison features + 12 query comparisons + 35 previous-action bits.
pub const OBSERVATION_WIDTH: usize = comparison_width(NUM_VARS) + 3 * NUM_VARS + 35;

pub mod op {
    pub const MOVE_VAR: usize = 0;
    pub const ASSIGN_VAR: usize = 1;
    pub const ASSIGN_MID: usize = 2;
    pub const FOUND: usize = 3;
    pub const NOT_FOUND: usize = 4;
}

pub fn search_schema() -> &'static InstructionSchema {
    static S: OnceLock<InstructionSchema> = OnceLock::new();
    S.get_or_init(|| {
        let var = ArgKind::Int(NUM_VARS);
        InstructionSchema::new(
            "search",
            vec![
                InstructionType::new("MoveVar", vec![var, ArgKind::Bool]),
                InstructionType::new("AssignVar", vec![var, var]),
                InstructionType::new("AssignMid", vec![var, var, var]),
                InstructionType::new("Found", vec![var]).terminal(),
                InstructionType::new("NotFound", vec![]).terminal(),
            ],
        )
        .unwrap()
    })
}

pub fn move_var(i: usize, up: bool) -> Instruction {
    Instruction::new(op::MOVE_VAR, vec![i, usize::from(up)])
}

pub fn assign_var(i: usize, j: usize) -> Instruction {
    Instruction::new(op::ASSIGN_VAR, vec![i, j])
}

pub fn assign_mid(i: usize, j: usize, k: usize) -> Instruction {
    Instruction::new(op::ASSIGN_MID, vec![i, j, k])
}

pub fn found(i: usize) -> Instruction {
    Instruction::new(op::FOUND, vec![i])
}

pub fn not_found() -> Instruction {
    Instruction::new(op::NOT_FOUND, vec![])
}

/// How arrays and queries are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// Values and query uniform over `0..max(1, n/2)`, so the array holds
    /// repeats and most queries are present.
    Dense,
    /// Distinct values; member or non-member with equal probability.
    Mixed,
    MemberOnly,
    NonMemberOnly,
}

impl QueryMode {
    pub const ALL: [QueryMode; 4] = [
        QueryMode::Dense,
        QueryMode::Mixed,
        QueryMode::MemberOnly,
        QueryMode::NonMemberOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryMode::Dense => "dense",
            QueryMode::Mixed => "mixed",
            QueryMode::MemberOnly => "member-only",
            QueryMode::NonMemberOnly => "non-member-only",
        }
    }
}

impl std::fmt::Display for QueryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for QueryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(QueryMode::Dense),
            "mixed" => Ok(QueryMode::Mixed),
            "member-only" | "member" => Ok(QueryMode::MemberOnly),
            "non-member-only" | "non-member" => Ok(QueryMode::NonMemberOnly),
            other => Err(format!("unknown query mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRewardConfig {
    pub step_penalty: f64,
    /// Extra penalty for a wrong terminal; `None` means the instance size.
    pub wrong_penalty: Option<f64>,
}

impl Default for SearchRewardConfig {
    fn default() -> Self {
        SearchRewardConfig {
            step_penalty: 0.01,
            wrong_penalty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchState {
    array: Vec<i64>,
    query: i64,
    pub vars: [usize; NUM_VARS],
    pub prev_action: Option<Instruction>,
}

impl SearchState {
    pub fn new(array: Vec<i64>, query: i64) -> Result<Self, InstanceError> {
        if array.is_empty() {
            return Err(InstanceError::Range("search array must be nonempty".into()));
        }
        if array.windows(2).any(|w| w[0] > w[1]) {
            return Err(InstanceError::Range("search array must be sorted".into()));
        }
        let high = array.len() - 1;
        Ok(SearchState {
            array,
            query,
            vars: [0, 0, high, high],
            prev_action: None,
        })
    }

    /// In the distinct modes the array is `2 * s` for a sorted `n`-subset `s`
    /// of `0..2n`; members are uniform elements, non-members uniform odd
    /// values within one of the array's span.
    pub fn random<R: Rng + ?Sized>(n: usize, mode: QueryMode, rng: &mut R) -> Self {
        assert!(n >= 1, "instance size must be positive");
        if mode == QueryMode::Dense {
            let range = (n / 2).max(1) as i64;
            let mut array: Vec<i64> = (0..n).map(|_| rng.gen_range(0..range)).collect();
            array.sort_unstable();
            let query = rng.gen_range(0..range);
            return SearchState::new(array, query).unwrap();
        }
        let mut base: Vec<i64> = sample(rng, 2 * n, n).into_iter().map(|x| x as i64).collect();
        base.sort_unstable();
        let array: Vec<i64> = base.into_iter().map(|x| 2 * x).collect();
        let member = match mode {
            QueryMode::Mixed => rng.gen_bool(0.5),
            QueryMode::MemberOnly | QueryMode::Dense => true,
            QueryMode::NonMemberOnly => false,
        };
        let query = if member {
            array[rng.gen_range(0..n)]
        } else {
            // odd values in [A0 - 1, A_last + 1]
            let lo = array[0] - 1;
            let slots = (array[n - 1] - array[0]) / 2 + 1;
            lo + 2 * rng.gen_range(0..slots)
        };
        SearchState::new(array, query).unwrap()
    }

    pub fn array(&self) -> &[i64] {
        &self.array
    }

    pub fn query(&self) -> i64 {
        self.query
    }

    pub fn len(&self) -> usize {
        self.array.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains_query(&self) -> bool {
        self.array.binary_search(&self.query).is_ok()
    }

    /// `n q a_0 a_1 ...`
    pub fn to_line(&self) -> String {
        let mut s = format!("{} {}", self.array.len(), self.query);
        for x in &self.array {
            write!(s, " {x}").unwrap();
        }
        s
    }

    pub fn from_line(line: &str) -> Result<Self, InstanceError> {
        let nums: Vec<i64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|e| InstanceError::Parse(format!("`{t}`: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if nums.len() < 2 {
            return Err(InstanceError::Parse("expected `n q values...`".into()));
        }
        let n = usize::try_from(nums[0]).map_err(|_| InstanceError::Parse("negative n".into()))?;
        if nums.len() != 2 + n {
            return Err(InstanceError::Parse(format!(
                "declared {n} values, found {}",
                nums.len() - 2
            )));
        }
        SearchState::new(nums[2..].to_vec(), nums[1])
    }
}

pub fn observe_search(state: &SearchState) -> Vec<f64> {
    let mut out = Vec::with_capacity(OBSERVATION_WIDTH);
    let high = state.array.len() - 1;
    write_comparison_features(&state.array, 0, high, &state.vars, &mut out);
    for &v in &state.vars {
        let a = state.array[v];
        out.push(f64::from(state.query < a));
        out.push(f64::from(state.query == a));
        out.push(f64::from(state.query > a));
    }
    let start = out.len();
    out.resize(OBSERVATION_WIDTH, 0.0);
    search_schema()
        .encode_into(state.prev_action.as_ref(), &mut out[start..])
        .expect("previous action was validated on execution");
    out
}

#[derive(Debug, Clone)]
pub struct SearchEnv {
    state: SearchState,
    reward: SearchRewardConfig,
}

impl SearchEnv {
    pub fn new(state: SearchState, reward: SearchRewardConfig) -> Self {
        SearchEnv { state, reward }
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SearchState {
        &mut self.state
    }

    fn wrong_penalty(&self) -> f64 {
        self.reward
            .wrong_penalty
            .unwrap_or(self.state.array.len() as f64)
    }
}

impl Environment for SearchEnv {
    fn schema(&self) -> &InstructionSchema {
        search_schema()
    }

    fn observe(&self) -> Observation {
        Observation::Vector(observe_search(&self.state))
    }

    fn apply(&mut self, ins: &Instruction) -> Result<StepResult, VmError> {
        search_schema().validate(ins)?;
        let high = self.state.array.len() - 1;
        let a = &ins.args;
        let st = &mut self.state;
        let mut terminal = None;
        match ins.type_id {
            op::MOVE_VAR => {
                let v = &mut st.vars[a[0]];
                *v = if a[1] == 1 {
                    (*v + 1).min(high)
                } else {
                    v.saturating_sub(1)
                };
            }
            op::ASSIGN_VAR => st.vars[a[0]] = st.vars[a[1]],
            op::ASSIGN_MID => st.vars[a[0]] = (st.vars[a[1]] + st.vars[a[2]]) / 2,
            op::FOUND => {
                terminal = Some(if st.array[st.vars[a[0]]] == st.query {
                    Outcome::Solved
                } else {
                    Outcome::TerminatedWrong
                });
            }
            op::NOT_FOUND => {
                terminal = Some(if st.contains_query() {
                    Outcome::TerminatedWrong
                } else {
                    Outcome::Solved
                });
            }
            other => return Err(VmError::UnknownType(other)),
        }
        st.prev_action = Some(ins.clone());
        let mut reward = -self.reward.step_penalty;
        if terminal == Some(Outcome::TerminatedWrong) {
            reward -= self.wrong_penalty();
        }
        Ok(StepResult { reward, terminal })
    }

    fn is_solved(&self) -> bool {
        false
    }

    fn size(&self) -> usize {
        self.state.array.len()
    }

    fn render(&self) -> String {
        let st = &self.state;
        let mut s = String::new();
        let prev = st
            .prev_action
            .as_ref()
            .map_or("None".to_string(), |p| search_schema().display(p).to_string());
        writeln!(s, "q: {}    prev: {}", st.query, prev).unwrap();
        let width = st.array.iter().map(|x| x.to_string().len()).max().unwrap_or(1);
        let mut line = String::from("A:");
        let mut arrows = String::from("  ");
        for (pos, x) in st.array.iter().enumerate() {
            write!(line, " {x:>width$}").unwrap();
            let names: String = st
                .vars
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == pos)
                .map(|(i, _)| VAR_NAMES[i])
                .collect();
            write!(arrows, " {names:>width$}").unwrap();
        }
        writeln!(s, "{line}").unwrap();
        writeln!(s, "{}", arrows.trim_end()).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn widths() {
        assert_eq!(search_schema().arg_encoding_width().unwrap(), 29);
        assert_eq!(search_schema().encoding_width().unwrap(), 35);
        assert_eq!(OBSERVATION_WIDTH, 115);
    }

    #[test]
    fn assign_mid_floors() {
        let st = SearchState::new((0..6).collect(), 3).unwrap();
        let mut env = SearchEnv::new(st, SearchRewardConfig::default());
        env.state_mut().vars = [0, 0, 5, 5];
        env.apply(&assign_mid(0, 1, 2)).unwrap();
        assert_eq!(env.state().vars[0], 2);
    }

    #[test]
    fn wrong_found_is_penalised() {
        let st = SearchState::new(vec![1, 3, 5], 3).unwrap();
        let mut env = SearchEnv::new(st, SearchRewardConfig::default());
        let r = env.apply(&found(0)).unwrap();
        assert_eq!(r.terminal, Some(Outcome::TerminatedWrong));
        assert!((r.reward - (-0.01 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn correct_terminals() {
        let mut env = SearchEnv::new(
            SearchState::new(vec![1, 3, 5], 4).unwrap(),
            SearchRewardConfig::default(),
        );
        assert_eq!(env.apply(&not_found()).unwrap().terminal, Some(Outcome::Solved));
        let mut env = SearchEnv::new(
            SearchState::new(vec![7], 7).unwrap(),
            SearchRewardConfig::default(),
        );
        assert_eq!(env.apply(&found(3)).unwrap().terminal, Some(Outcome::Solved));
    }

    #[test]
    fn constant_array_query_blocks() {
        let st = SearchState::new(vec![4; 5], 4).unwrap();
        let f = observe_search(&st);
        assert_eq!(f.len(), 115);
        for i in 0..4 {
            assert_eq!(&f[68 + 3 * i..71 + 3 * i], &[0., 1., 0.]);
        }
        assert_eq!(f[114], 1.0);
    }

    #[test]
    fn sampler_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 7, 30] {
            for _ in 0..200 {
                let m = SearchState::random(n, QueryMode::MemberOnly, &mut rng);
                assert!(m.contains_query());
                let o = SearchState::random(n, QueryMode::NonMemberOnly, &mut rng);
                assert!(!o.contains_query());
                assert!(o.query() >= o.array()[0] - 1 && o.query() <= o.array()[n - 1] + 1);
                assert!(o.array().windows(2).all(|w| w[0] < w[1]));
                let d = SearchState::random(n, QueryMode::Dense, &mut rng);
                assert!(d.array().windows(2).all(|w| w[0] <= w[1]));
                assert!(d.query() >= 0 && d.query() < (n as i64 / 2).max(1));
            }
        }
    }

    #[test]
    fn line_round_trip() {
        let st = SearchState::new(vec![0, 2, 8], 3).unwrap();
        assert_eq!(SearchState::from_line(&st.to_line()).unwrap(), st);
        assert!(SearchState::from_line("2 0 5 1").is_err());
    }
}
