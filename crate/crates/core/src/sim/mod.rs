//! Deterministic discrete-event simulator.
//!
//! One run owns every node, every in-flight message and every timer. Events
//! are ordered by `(time, node, seq)`, where `node` is the sender for
//! deliveries, so simultaneous arrivals resolve towards lower ids.

mod crash;
mod delay;
mod engine;
mod profile;
mod rng;

pub use crash::{parse_crash, select_targets, CrashPlan, CrashStrategy};
pub use delay::{sample_delay, DelayModel, DEFAULT_ROTATION_ROUNDS};
pub use engine::run;
pub use profile::{HeterogeneityProfile, Zone, DEFAULT_BASE_SERVICE_MS, REFERENCE_VCPU, ZONE_VCPUS};
pub use rng::{Purpose, Streams};

use crate::consensus::{ClusterConfig, NodeId};
use crate::trace::ExecutionTrace;
use crate::weight_scheme::max_threshold;
use crate::workload::OperationMix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconfiguration {
    pub after_round: u64,
    pub t: usize,
}

/// Multiplies a node's service time while both windows (when given) hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadChange {
    pub node: NodeId,
    pub factor: f64,
    #[serde(default)]
    pub from_round: Option<u64>,
    #[serde(default)]
    pub until_round: Option<u64>,
    #[serde(default)]
    pub from_ms: Option<f64>,
    #[serde(default)]
    pub until_ms: Option<f64>,
}

impl LoadChange {
    pub fn active(&self, round: u64, now_ms: f64) -> bool {
        self.from_round.is_none_or(|r| round >= r)
            && self.until_round.is_none_or(|r| round < r)
            && self.from_ms.is_none_or(|t| now_ms >= t)
            && self.until_ms.is_none_or(|t| now_ms < t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Pause between a commit and the next round.
    pub inter_round_gap_ms: f64,
    /// A round stays open for late replies for this multiple of its commit
    /// latency, but never past the start of the next round.
    pub grace_factor: f64,
    pub heartbeat_ms: Option<f64>,
    /// Give up when nothing commits for this long.
    pub time_cap_ms: Option<f64>,
    pub bootstrap_leader: NodeId,
    /// Scale follower service by the batch's operation mix.
    pub kind_weighted_service: bool,
    pub reconfigurations: Vec<Reconfiguration>,
    pub load_changes: Vec<LoadChange>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            inter_round_gap_ms: 0.0,
            grace_factor: 2.0,
            heartbeat_ms: None,
            time_cap_ms: None,
            bootstrap_leader: 1,
            kind_weighted_service: false,
            reconfigurations: Vec::new(),
            load_changes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub cluster: ClusterConfig,
    pub profile: HeterogeneityProfile,
    pub delays: DelayModel,
    pub crashes: Vec<CrashPlan>,
    pub mix: OperationMix,
    pub batch_size: usize,
    pub seed: u64,
    pub rounds: u64,
    pub options: SimOptions,
}

impl SimConfig {
    /// Homogeneous, delay-free, crash-free defaults.
    pub fn new(cluster: ClusterConfig, seed: u64, rounds: u64) -> Self {
        let n = cluster.n;
        SimConfig {
            cluster,
            profile: HeterogeneityProfile::homogeneous(n, DEFAULT_BASE_SERVICE_MS),
            delays: DelayModel::None,
            crashes: Vec::new(),
            mix: OperationMix::named("A").expect("built-in mix"),
            batch_size: 100,
            seed,
            rounds,
            options: SimOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.cluster.n;
        if n < 3 {
            return Err(format!("need at least 3 nodes, got {n}"));
        }
        if self.cluster.scheme.n() != n {
            return Err("scheme size does not match n".into());
        }
        if self.rounds == 0 {
            return Err("rounds must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be at least 1".into());
        }
        let (lo, hi) = self.cluster.election_timeout_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err("election timeout range must satisfy 0 < min <= max".into());
        }
        self.profile.validate(n)?;
        self.delays.validate()?;
        self.mix.validate().map_err(|e| e.to_string())?;
        for c in &self.crashes {
            c.validate(n)?;
        }
        let o = &self.options;
        if !(o.inter_round_gap_ms >= 0.0 && o.grace_factor >= 0.0) {
            return Err("gap and grace must be non-negative".into());
        }
        if o.heartbeat_ms.is_some_and(|h| h.is_nan() || h <= 0.0) || o.time_cap_ms.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err("heartbeat and time cap must be positive".into());
        }
        if o.bootstrap_leader < 1 || o.bootstrap_leader as usize > n {
            return Err(format!("bootstrap leader {} outside 1..={n}", o.bootstrap_leader));
        }
        for r in &o.reconfigurations {
            if r.t < 1 || r.t > max_threshold(n) {
                return Err(format!("reconfiguration to t={} outside 1..={}", r.t, max_threshold(n)));
            }
        }
        for l in &o.load_changes {
            if l.node < 1 || l.node as usize > n || l.factor.is_nan() || l.factor <= 0.0 {
                return Err(format!("bad load change for node {}", l.node));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("livelock: nothing committed for {cap_ms} ms after {rounds} rounds")]
    Livelock {
        cap_ms: f64,
        rounds: u64,
        trace: Box<ExecutionTrace>,
    },
}

impl SimError {
    pub fn trace(&self) -> Option<&ExecutionTrace> {
        match self {
            SimError::Livelock { trace, .. } => Some(trace),
            SimError::Config(_) => None,
        }
    }
}
