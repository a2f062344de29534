use crate::consensus::{Assignment, NodeId};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashStrategy {
    #[serde(alias = "strong_kills")]
    Strong,
    #[serde(alias = "weak_kills")]
    Weak,
    #[serde(alias = "random_kills")]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashPlan {
    pub strategy: CrashStrategy,
    pub count: usize,
    /// Kills happen after this many committed rounds.
    pub trigger_round: u64,
    /// Rounds between successive single kills; absent means all at once.
    #[serde(default)]
    pub stagger: Option<u64>,
    /// Strong kills spare the leader unless this is set.
    #[serde(default)]
    pub include_leader: bool,
    #[serde(default)]
    pub recover_after_ms: Option<f64>,
}

impl CrashPlan {
    pub fn new(strategy: CrashStrategy, count: usize, trigger_round: u64) -> Self {
        CrashPlan {
            strategy,
            count,
            trigger_round,
            stagger: None,
            include_leader: false,
            recover_after_ms: None,
        }
    }

    pub fn staggered(mut self, every: u64) -> Self {
        self.stagger = Some(every);
        self
    }

    pub fn with_leader(mut self) -> Self {
        self.include_leader = true;
        self
    }

    /// `(after round, kills)` pairs.
    pub fn schedule(&self) -> Vec<(u64, usize)> {
        match self.stagger {
            Some(s) if s > 0 && self.count > 1 => (0..self.count as u64)
                .map(|k| (self.trigger_round + k * s, 1))
                .collect(),
            _ if self.count == 0 => vec![],
            _ => vec![(self.trigger_round, self.count)],
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        if self.count > n.saturating_sub(1) {
            return Err(format!("cannot crash {} of {n} nodes", self.count));
        }
        if let Some(ms) = self.recover_after_ms {
            if ms.is_nan() || ms < 0.0 {
                return Err("recover_after_ms must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// `strong:2@20`, `weak:1@5`, `random:3@10`; `none` yields no plan.
pub fn parse_crash(text: &str) -> Result<Option<CrashPlan>, String> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let bad = || format!("crash spec `{text}` is not <strategy>:<x>@<round>");
    let (strategy, rest) = text.split_once(':').ok_or_else(bad)?;
    let (count, round) = rest.split_once('@').ok_or_else(bad)?;
    let strategy = CrashStrategy::from_str(strategy)?;
    let count = count.parse().map_err(|_| bad())?;
    let round = round.parse().map_err(|_| bad())?;
    Ok(Some(CrashPlan::new(strategy, count, round)))
}

impl fmt::Display for CrashStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrashStrategy::Strong => "strong",
            CrashStrategy::Weak => "weak",
            CrashStrategy::Random => "random",
        })
    }
}

impl FromStr for CrashStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strong" | "strong_kills" => Ok(CrashStrategy::Strong),
            "weak" | "weak_kills" => Ok(CrashStrategy::Weak),
            "random" | "random_kills" => Ok(CrashStrategy::Random),
            other => Err(format!("unknown crash strategy `{other}`")),
        }
    }
}

/// Picks up to `count` live victims. Strong and weak kills order by the
/// given assignment; without one they fall back to random choice.
pub fn select_targets(
    plan: &CrashPlan,
    count: usize,
    assignment: Option<&Assignment>,
    leader: Option<NodeId>,
    alive: &[bool],
    rng: &mut impl Rng,
) -> Vec<NodeId> {
    let live = |id: NodeId| alive[id as usize - 1];
    let spare_leader = match plan.strategy {
        CrashStrategy::Strong => !plan.include_leader,
        CrashStrategy::Weak => true,
        CrashStrategy::Random => false,
    };
    let mut candidates: Vec<NodeId> = (1..=alive.len() as NodeId)
        .filter(|&id| live(id) && !(spare_leader && Some(id) == leader))
        .collect();
    match (plan.strategy, assignment) {
        (CrashStrategy::Strong, Some(a)) => candidates.sort_by_key(|&id| a.rank_of(id)),
        (CrashStrategy::Weak, Some(a)) => candidates.sort_by_key(|&id| std::cmp::Reverse(a.rank_of(id))),
        _ => candidates.shuffle(rng),
    }
    candidates.truncate(count);
    candidates
}
