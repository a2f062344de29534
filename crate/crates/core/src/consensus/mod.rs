//! Node state machines for weighted (Cabinet) and majority replication.
//!
//! Handlers are plain methods over [`NodeState`]: they mutate the node and
//! return the messages to emit. Sequencing, delivery and time belong to the
//! simulator.

mod log;
mod node;
mod read;
mod weights;

pub use log::{Log, CHAIN_SEED};
pub use node::NodeState;
pub use read::{weighted_read, ReadError, ReadOutcome};
pub use weights::{Assignment, Quorum, QueuedReply, Round, RoundKind, RoundStatus, WeightQueue};

use crate::digest::Fnv64;
use crate::weight_scheme::{generate_scheme, max_threshold, SchemeError, WeightScheme};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub type NodeId = u32;
pub type Term = u64;
pub type WClock = u64;
pub type LogIndex = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Cabinet,
    #[serde(rename = "baseline", alias = "majority_baseline")]
    MajorityBaseline,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Cabinet => "cabinet",
            Algo::MajorityBaseline => "baseline",
        })
    }
}

impl FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cabinet" => Ok(Algo::Cabinet),
            "baseline" | "majority_baseline" | "raft" => Ok(Algo::MajorityBaseline),
            other => Err(format!("unknown algo `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Follower,
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n: usize,
    pub t: usize,
    pub scheme: WeightScheme,
    /// Milliseconds.
    pub election_timeout_range: (f64, f64),
    pub epoch: u64,
    pub algo: Algo,
}

pub const DEFAULT_ELECTION_TIMEOUT_MS: (f64, f64) = (150.0, 300.0);

impl ClusterConfig {
    /// The baseline has no threshold of its own; it carries the largest one
    /// so that its scheme stays well formed.
    pub fn new(algo: Algo, n: usize, t: usize) -> Result<Self, SchemeError> {
        let t = match algo {
            Algo::Cabinet => t,
            Algo::MajorityBaseline => max_threshold(n).max(1),
        };
        Ok(ClusterConfig {
            n,
            t,
            scheme: generate_scheme(n, t)?,
            election_timeout_range: DEFAULT_ELECTION_TIMEOUT_MS,
            epoch: 0,
            algo,
        })
    }

    pub fn majority(&self) -> usize {
        self.n / 2 + 1
    }

    /// Votes (self included) a candidate needs.
    pub fn election_quorum(&self) -> usize {
        match self.algo {
            Algo::Cabinet => self.n - self.t,
            Algo::MajorityBaseline => self.majority(),
        }
    }

    pub(crate) fn with_change(&self, change: &ConfigChange) -> ClusterConfig {
        ClusterConfig {
            t: change.t,
            scheme: change.scheme.clone(),
            epoch: change.epoch,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigChange {
    pub epoch: u64,
    pub t: usize,
    pub scheme: WeightScheme,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Batch(Arc<[u8]>),
    Config(Arc<ConfigChange>),
}

impl Payload {
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::new();
        match self {
            Payload::Batch(bytes) => {
                h.write(b"B").write(bytes);
            }
            Payload::Config(c) => {
                h.write(b"C").write_u64(c.epoch).write_u64(c.t as u64);
                for w in c.scheme.weights() {
                    h.write_u64(w.to_bits());
                }
            }
        }
        h.finish()
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Payload::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub index: LogIndex,
    pub term: Term,
    pub wclock: WClock,
    pub payload: Payload,
    /// Weight this node held when it acknowledged the entry's round.
    pub committed_weight: f64,
}

impl LogEntry {
    /// Identity of the entry, independent of who stores it.
    pub fn digest(&self) -> u64 {
        Fnv64::new()
            .write_u64(self.index)
            .write_u64(self.term)
            .write_u64(self.wclock)
            .write_u64(self.payload.digest())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendEntriesMsg {
    pub term: Term,
    pub leader_id: NodeId,
    pub prev_index: LogIndex,
    pub prev_term: Term,
    pub entries: Vec<LogEntry>,
    pub leader_commit: LogIndex,
    pub wclock: WClock,
    pub weight: f64,
    /// Leader-local sequence number, echoed so stale failures can be told apart.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendReply {
    pub term: Term,
    pub from_id: NodeId,
    pub success: bool,
    pub acked_index: LogIndex,
    pub echoed_wclock: WClock,
    pub echoed_weight: f64,
    pub echoed_seq: u64,
    /// On failure: where the leader should resume sending from.
    pub hint: LogIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestVote {
    pub term: Term,
    pub candidate_id: NodeId,
    pub last_index: LogIndex,
    pub last_term: Term,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteReply {
    pub term: Term,
    pub from_id: NodeId,
    pub granted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heartbeat {
    pub term: Term,
    pub leader_id: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Append(AppendEntriesMsg),
    AppendReply(AppendReply),
    RequestVote(RequestVote),
    Vote(VoteReply),
    Heartbeat(Heartbeat),
}

impl Message {
    pub fn term(&self) -> Term {
        match self {
            Message::Append(m) => m.term,
            Message::AppendReply(m) => m.term,
            Message::RequestVote(m) => m.term,
            Message::Vote(m) => m.term,
            Message::Heartbeat(m) => m.term,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Append(_) => "append",
            Message::AppendReply(r) if r.success => "append_ok",
            Message::AppendReply(_) => "append_fail",
            Message::RequestVote(_) => "vote_request",
            Message::Vote(_) => "vote",
            Message::Heartbeat(_) => "heartbeat",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("node is not the leader")]
    NotLeader,
    #[error("a round is already in flight")]
    RoundInFlight,
    #[error("reply belongs to a closed or different round")]
    StaleWclock,
    #[error("node already replied in this round")]
    DuplicateReply,
    #[error("no open round")]
    RoundNotOpen,
    #[error("round has not committed")]
    RoundNotCommitted,
    #[error("failed reply passed to the success path")]
    FailedReply,
    #[error("the majority baseline has no failure threshold to reconfigure")]
    NoThreshold,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn election_quorums() {
        let cab = ClusterConfig::new(Algo::Cabinet, 5, 1).unwrap();
        assert_eq!(cab.election_quorum(), 4);
        let base = ClusterConfig::new(Algo::MajorityBaseline, 5, 1).unwrap();
        assert_eq!(base.election_quorum(), 3);
        assert_eq!(base.majority(), 3);
        assert_eq!(ClusterConfig::new(Algo::Cabinet, 7, 2).unwrap().election_quorum(), 5);
    }

    #[test]
    fn algo_text() {
        assert_eq!("cabinet".parse::<Algo>(), Ok(Algo::Cabinet));
        assert_eq!("baseline".parse::<Algo>(), Ok(Algo::MajorityBaseline));
        assert!("paxos".parse::<Algo>().is_err());
        assert_eq!(Algo::MajorityBaseline.to_string(), "baseline");
    }

    #[test]
    fn payload_digest_separates_kinds() {
        let a = Payload::Batch(Arc::from(&b"x"[..]));
        let b = Payload::Batch(Arc::from(&b"y"[..]));
        assert_ne!(a.digest(), b.digest());
        let s = generate_scheme(5, 1).unwrap();
        let c = Payload::Config(Arc::new(ConfigChange { epoch: 1, t: 1, scheme: s }));
        assert_ne!(a.digest(), c.digest());
    }
}
