use super::{LogIndex, NodeId, WClock};
use crate::time::SimTime;
use std::collections::BTreeSet;

/// Which node holds which weight for one round. Rank 0 is the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    ranking: Vec<NodeId>,
    weights: Vec<f64>,
    rank_of: Vec<usize>,
}

impl Assignment {
    /// `ranking` must be a permutation of `1..=n`; `weights` are per rank.
    pub fn new(ranking: Vec<NodeId>, weights: Vec<f64>) -> Self {
        assert_eq!(ranking.len(), weights.len(), "one weight per rank");
        let mut rank_of = vec![usize::MAX; ranking.len()];
        for (rank, &node) in ranking.iter().enumerate() {
            let slot = rank_of
                .get_mut(node as usize - 1)
                .expect("node id within 1..=n");
            assert_eq!(*slot, usize::MAX, "node {node} ranked twice");
            *slot = rank;
        }
        Assignment {
            ranking,
            weights,
            rank_of,
        }
    }

    /// Leader first, then the other nodes by ascending id.
    pub fn initial(leader: NodeId, weights: Vec<f64>) -> Self {
        let n = weights.len() as NodeId;
        let ranking = std::iter::once(leader)
            .chain((1..=n).filter(|&id| id != leader))
            .collect();
        Assignment::new(ranking, weights)
    }

    pub fn n(&self) -> usize {
        self.ranking.len()
    }

    pub fn leader(&self) -> NodeId {
        self.ranking[0]
    }

    pub fn ranking(&self) -> &[NodeId] {
        &self.ranking
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rank_of(&self, node: NodeId) -> usize {
        self.rank_of[node as usize - 1]
    }

    pub fn weight_of(&self, node: NodeId) -> f64 {
        self.weights[self.rank_of(node)]
    }

    /// The `size` heaviest holders, leader included.
    pub fn cabinet(&self, size: usize) -> &[NodeId] {
        &self.ranking[..size.min(self.ranking.len())]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.ranking.iter().copied().zip(self.weights.iter().copied())
    }

    /// Same ranking, different per-rank weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        Assignment::new(self.ranking.clone(), weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedReply {
    pub node: NodeId,
    pub weight: f64,
    pub arrival: SimTime,
}

/// Replies of one round in arrival order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightQueue {
    entries: Vec<QueuedReply>,
}

impl WeightQueue {
    /// False if `reply.node` is already queued.
    pub fn push(&mut self, reply: QueuedReply) -> bool {
        if self.contains(reply.node) {
            return false;
        }
        self.entries.push(reply);
        true
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.entries.iter().any(|e| e.node == node)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[QueuedReply] {
        &self.entries
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quorum {
    /// Acknowledged weight must exceed `ct`.
    Weighted { ct: f64 },
    /// Acknowledging nodes, leader included.
    Count { needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundKind {
    Batch,
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundStatus {
    Pending,
    /// This reply pushed the round over its quorum.
    Committed,
    /// Reply to a round that had already committed.
    Late,
}

/// One weighted-consensus instance.
#[derive(Debug, Clone)]
pub struct Round {
    pub wclock: WClock,
    pub index: LogIndex,
    pub kind: RoundKind,
    pub started_at: SimTime,
    pub quorum: Quorum,
    pub weights: Assignment,
    pub accumulator: f64,
    pub acks: usize,
    pub queue: WeightQueue,
    pub committed_at: Option<SimTime>,
    pub replies_at_commit: usize,
    /// Followers whose append failed this round; they earn no queue position.
    pub excluded: BTreeSet<NodeId>,
    pub acked: BTreeSet<NodeId>,
    pub closed: bool,
}

impl Round {
    pub(crate) fn new(
        wclock: WClock,
        index: LogIndex,
        kind: RoundKind,
        started_at: SimTime,
        quorum: Quorum,
        weights: Assignment,
    ) -> Self {
        let accumulator = weights.weights()[0];
        Round {
            wclock,
            index,
            kind,
            started_at,
            quorum,
            weights,
            accumulator,
            acks: 1,
            queue: WeightQueue::default(),
            committed_at: None,
            replies_at_commit: 0,
            excluded: BTreeSet::new(),
            acked: BTreeSet::new(),
            closed: false,
        }
    }

    pub fn is_committed(&self) -> bool {
        self.committed_at.is_some()
    }

    pub fn quorum_reached(&self) -> bool {
        match self.quorum {
            Quorum::Weighted { ct } => self.accumulator > ct,
            Quorum::Count { needed } => self.acks >= needed,
        }
    }

    pub fn ct(&self) -> Option<f64> {
        match self.quorum {
            Quorum::Weighted { ct } => Some(ct),
            Quorum::Count { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_assignment_descends_by_id() {
        let a = Assignment::initial(1, vec![12.0, 10.0, 8.0, 6.0, 4.0, 3.0, 2.0]);
        assert_eq!(a.weight_of(1), 12.0);
        assert_eq!(a.weight_of(2), 10.0);
        assert_eq!(a.weight_of(7), 2.0);
        assert_eq!(a.cabinet(3), &[1, 2, 3]);

        let b = Assignment::initial(4, vec![3.0, 2.0, 1.0, 0.5]);
        assert_eq!(b.ranking(), &[4, 1, 2, 3]);
        assert_eq!(b.rank_of(3), 3);
    }

    #[test]
    #[should_panic(expected = "ranked twice")]
    fn rejects_duplicates() {
        Assignment::new(vec![1, 1, 2], vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn queue_is_fifo_and_unique() {
        let mut q = WeightQueue::default();
        let at = SimTime::ZERO;
        assert!(q.push(QueuedReply { node: 3, weight: 8.0, arrival: at }));
        assert!(q.push(QueuedReply { node: 2, weight: 10.0, arrival: at }));
        assert!(!q.push(QueuedReply { node: 3, weight: 8.0, arrival: at }));
        assert_eq!(q.nodes().collect::<Vec<_>>(), vec![3, 2]);
    }
}
