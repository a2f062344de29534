use super::{
    Algo, AppendEntriesMsg, AppendReply, Assignment, ClusterConfig, ConfigChange, ConsensusError,
    Heartbeat, Log, LogEntry, LogIndex, NodeId, Payload, Quorum, QueuedReply, RequestVote, Role,
    Round, RoundKind, RoundStatus, Term, VoteReply, WClock,
};
use crate::time::SimTime;
use crate::weight_scheme::{generate_scheme, WeightScheme};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Last weight clock and weight a node accepted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightState {
    pub wc: WClock,
    pub w: f64,
}

#[derive(Debug, Clone)]
struct LeaderState {
    wclock: WClock,
    assignment: Option<Assignment>,
    round: Option<Round>,
    next_index: Vec<LogIndex>,
    match_index: Vec<LogIndex>,
    repair_floor: Vec<u64>,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    id: NodeId,
    role: Role,
    current_term: Term,
    voted_for: Option<NodeId>,
    log: Log,
    commit_index: LogIndex,
    weight_state: WeightState,
    config: ClusterConfig,
    base: ClusterConfig,
    election_timeout: f64,
    leader_hint: Option<NodeId>,
    votes: BTreeSet<NodeId>,
    leader: Option<LeaderState>,
}

fn slot(node: NodeId) -> usize {
    node as usize - 1
}

impl NodeState {
    pub fn new(id: NodeId, config: ClusterConfig) -> Self {
        assert!(id >= 1 && id as usize <= config.n, "node id {id} outside 1..={}", config.n);
        let election_timeout = config.election_timeout_range.0;
        NodeState {
            id,
            role: Role::Follower,
            current_term: 0,
            voted_for: None,
            log: Log::new(),
            commit_index: 0,
            weight_state: WeightState::default(),
            base: config.clone(),
            config,
            election_timeout,
            leader_hint: None,
            votes: BTreeSet::new(),
            leader: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leader
    }

    pub fn current_term(&self) -> Term {
        self.current_term
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn log(&self) -> &Log {
        &self.log
    }

    pub fn commit_index(&self) -> LogIndex {
        self.commit_index
    }

    pub fn weight_state(&self) -> WeightState {
        self.weight_state
    }

    /// Active configuration: the latest one present in the log.
    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn scheme(&self) -> &WeightScheme {
        &self.config.scheme
    }

    pub fn config_epoch(&self) -> u64 {
        self.config.epoch
    }

    pub fn election_timeout(&self) -> f64 {
        self.election_timeout
    }

    pub fn set_election_timeout(&mut self, ms: f64) {
        self.election_timeout = ms;
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.leader_hint
    }

    pub fn votes(&self) -> usize {
        self.votes.len()
    }

    /// The open round, or the last one if it has been finalized.
    pub fn round(&self) -> Option<&Round> {
        self.leader.as_ref()?.round.as_ref()
    }

    /// Weights for the next round (cabinet leaders only).
    pub fn assignment(&self) -> Option<&Assignment> {
        self.leader.as_ref()?.assignment.as_ref()
    }

    pub fn leader_wclock(&self) -> Option<WClock> {
        self.leader.as_ref().map(|l| l.wclock)
    }

    pub fn match_index(&self, node: NodeId) -> Option<LogIndex> {
        self.leader.as_ref().map(|l| l.match_index[slot(node)])
    }

    /// Installs `leader` for `term` without an election.
    pub fn bootstrap(&mut self, leader: NodeId, term: Term) -> Option<Assignment> {
        self.current_term = term;
        self.voted_for = Some(leader);
        self.leader_hint = Some(leader);
        if leader == self.id {
            self.become_leader()
        } else {
            None
        }
    }

    /// Volatile state is lost; term, vote and log survive.
    pub fn restart(&mut self) {
        self.role = Role::Follower;
        self.leader = None;
        self.votes.clear();
        self.leader_hint = None;
    }

    fn step_down(&mut self, term: Term) {
        if term > self.current_term {
            self.current_term = term;
            self.voted_for = None;
        }
        self.role = Role::Follower;
        self.leader = None;
        self.votes.clear();
    }

    fn refresh_config(&mut self) {
        self.config = match self.log.latest_config() {
            Some(change) => self.base.with_change(change),
            None => self.base.clone(),
        };
    }

    pub fn start_round(
        &mut self,
        batch: Arc<[u8]>,
        now: SimTime,
    ) -> Result<Vec<(NodeId, AppendEntriesMsg)>, ConsensusError> {
        let ls = self.leader.as_ref().ok_or(ConsensusError::NotLeader)?;
        if ls.round.as_ref().is_some_and(|r| !r.closed) {
            return Err(ConsensusError::RoundInFlight);
        }
        let (weights, quorum) = match self.config.algo {
            Algo::Cabinet => (
                ls.assignment.clone().expect("cabinet leader has an assignment"),
                Quorum::Weighted {
                    ct: self.config.scheme.ct(),
                },
            ),
            Algo::MajorityBaseline => (
                Assignment::initial(self.id, vec![1.0; self.config.n]),
                Quorum::Count {
                    needed: self.config.majority(),
                },
            ),
        };
        Ok(self.open_round(RoundKind::Batch, Payload::Batch(batch), weights, quorum, now))
    }

    fn open_round(
        &mut self,
        kind: RoundKind,
        payload: Payload,
        weights: Assignment,
        quorum: Quorum,
        now: SimTime,
    ) -> Vec<(NodeId, AppendEntriesMsg)> {
        let is_config = payload.is_config();
        let ls = self.leader.as_mut().expect("caller checked leadership");
        ls.wclock += 1;
        let wclock = ls.wclock;
        let own = weights.weights()[0];
        self.log.append(LogEntry {
            index: 0,
            term: self.current_term,
            wclock,
            payload,
            committed_weight: own,
        });
        let index = self.log.last_index();
        ls.match_index[slot(self.id)] = index;
        self.weight_state = WeightState { wc: wclock, w: own };

        let mut out = Vec::with_capacity(weights.n().saturating_sub(1));
        for &node in weights.ranking().iter().skip(1) {
            let msg = build_append(
                &self.log,
                ls,
                self.current_term,
                self.id,
                self.commit_index,
                node,
                wclock,
                weights.weight_of(node),
            );
            out.push((node, msg));
        }
        ls.round = Some(Round::new(wclock, index, kind, now, quorum, weights));
        if is_config {
            self.refresh_config();
        }
        out
    }

    /// Success path of a follower's reply.
    pub fn on_append_reply(
        &mut self,
        reply: &AppendReply,
        arrival: SimTime,
    ) -> Result<RoundStatus, ConsensusError> {
        if !reply.success {
            return Err(ConsensusError::FailedReply);
        }
        if reply.term > self.current_term {
            self.step_down(reply.term);
            return Err(ConsensusError::NotLeader);
        }
        let term = self.current_term;
        let ls = self.leader.as_mut().ok_or(ConsensusError::NotLeader)?;
        if reply.term < term {
            return Err(ConsensusError::StaleWclock);
        }
        let f = slot(reply.from_id);
        ls.match_index[f] = ls.match_index[f].max(reply.acked_index);
        ls.next_index[f] = ls.next_index[f].max(reply.acked_index + 1);

        let round = ls
            .round
            .as_mut()
            .filter(|r| !r.closed && r.wclock == reply.echoed_wclock)
            .ok_or(ConsensusError::StaleWclock)?;
        if reply.acked_index < round.index {
            return Err(ConsensusError::StaleWclock);
        }
        if !round.acked.insert(reply.from_id) {
            return Err(ConsensusError::DuplicateReply);
        }
        // A follower that needed repair still stores the entry, so its weight
        // counts towards the quorum, but it earns no place in the queue.
        if !round.excluded.contains(&reply.from_id) {
            round.queue.push(QueuedReply {
                node: reply.from_id,
                weight: reply.echoed_weight,
                arrival,
            });
        }
        if round.is_committed() {
            return Ok(RoundStatus::Late);
        }
        round.accumulator += reply.echoed_weight;
        round.acks += 1;
        if !round.quorum_reached() {
            return Ok(RoundStatus::Pending);
        }
        round.committed_at = Some(arrival);
        round.replies_at_commit = round.acked.len();
        let index = round.index;
        self.commit_index = self.commit_index.max(index);
        Ok(RoundStatus::Committed)
    }

    /// Failure path: returns the repair message to send, if any.
    pub fn on_append_failure(&mut self, reply: &AppendReply) -> Option<(NodeId, AppendEntriesMsg)> {
        if reply.term > self.current_term {
            self.step_down(reply.term);
            return None;
        }
        let term = self.current_term;
        let ls = self.leader.as_mut()?;
        if reply.term < term || reply.success {
            return None;
        }
        let f = slot(reply.from_id);
        if let Some(round) = ls.round.as_mut() {
            if !round.closed && round.wclock == reply.echoed_wclock {
                round.excluded.insert(reply.from_id);
            }
        }
        if reply.echoed_seq < ls.repair_floor[f] {
            return None;
        }
        let last = self.log.last_index();
        ls.next_index[f] = reply.hint.max(ls.match_index[f] + 1).clamp(1, last + 1);
        let (wclock, weight) = match ls.round.as_ref() {
            Some(r) => (r.wclock, r.weights.weight_of(reply.from_id)),
            None => (ls.wclock, reply.echoed_weight),
        };
        let msg = build_append(
            &self.log,
            ls,
            term,
            self.id,
            self.commit_index,
            reply.from_id,
            wclock,
            weight,
        );
        ls.repair_floor[f] = msg.seq;
        Some((reply.from_id, msg))
    }

    /// Closes the committed round and returns next round's weights. Late
    /// repliers follow the queue; silent nodes take the remaining weights by
    /// previous weight, heaviest first.
    pub fn finalize_round(&mut self) -> Result<Option<Assignment>, ConsensusError> {
        let algo = self.config.algo;
        let id = self.id;
        let ls = self.leader.as_mut().ok_or(ConsensusError::NotLeader)?;
        let round = ls
            .round
            .as_mut()
            .filter(|r| !r.closed)
            .ok_or(ConsensusError::RoundNotOpen)?;
        if !round.is_committed() {
            return Err(ConsensusError::RoundNotCommitted);
        }
        round.closed = true;
        if algo == Algo::MajorityBaseline {
            return Ok(None);
        }
        let prev = &round.weights;
        let mut order = Vec::with_capacity(prev.n());
        order.push(id);
        order.extend(round.queue.nodes());
        let queued: BTreeSet<NodeId> = order.iter().copied().collect();
        let mut rest: Vec<NodeId> = prev
            .ranking()
            .iter()
            .copied()
            .filter(|n| !queued.contains(n))
            .collect();
        rest.sort_by_key(|&n| (prev.rank_of(n), n));
        order.extend(rest);
        let next = Assignment::new(order, prev.weights().to_vec());
        self.weight_state.w = next.weights()[0];
        ls.assignment = Some(next.clone());
        Ok(Some(next))
    }

    pub fn handle_append_entries(&mut self, msg: &AppendEntriesMsg) -> AppendReply {
        let fail = |node: &NodeState, hint| AppendReply {
            term: node.current_term,
            from_id: node.id,
            success: false,
            acked_index: 0,
            echoed_wclock: msg.wclock,
            echoed_weight: msg.weight,
            echoed_seq: msg.seq,
            hint,
        };
        if msg.term < self.current_term {
            return fail(self, 0);
        }
        if msg.term > self.current_term || self.role != Role::Follower {
            self.step_down(msg.term);
        }
        self.leader_hint = Some(msg.leader_id);

        if msg.prev_index > self.log.last_index() {
            let hint = self.log.last_index() + 1;
            return fail(self, hint);
        }
        if self.log.term_at(msg.prev_index) != Some(msg.prev_term) {
            let hint = self
                .log
                .first_index_of_term_run(msg.prev_index)
                .max(self.commit_index + 1);
            return fail(self, hint);
        }

        let mut config_touched = false;
        for e in &msg.entries {
            match self.log.term_at(e.index) {
                Some(term) if term == e.term => continue,
                Some(_) => {
                    config_touched |= self.log.suffix(e.index).iter().any(|x| x.payload.is_config());
                    self.log.truncate_from(e.index);
                }
                None => {}
            }
            config_touched |= e.payload.is_config();
            let mut entry = e.clone();
            entry.committed_weight = msg.weight;
            self.log.append(entry);
        }
        if config_touched {
            self.refresh_config();
        }
        let last_new = msg.prev_index + msg.entries.len() as LogIndex;
        if msg.leader_commit > self.commit_index {
            self.commit_index = self.commit_index.max(msg.leader_commit.min(last_new));
        }
        self.weight_state = WeightState {
            wc: msg.wclock,
            w: msg.weight,
        };
        AppendReply {
            term: self.current_term,
            from_id: self.id,
            success: true,
            acked_index: last_new,
            echoed_wclock: msg.wclock,
            echoed_weight: msg.weight,
            echoed_seq: msg.seq,
            hint: 0,
        }
    }

    pub fn heartbeat(&self) -> Option<Heartbeat> {
        self.is_leader().then_some(Heartbeat {
            term: self.current_term,
            leader_id: self.id,
        })
    }

    /// True when the heartbeat comes from a current leader.
    pub fn handle_heartbeat(&mut self, hb: &Heartbeat) -> bool {
        if hb.term < self.current_term {
            return false;
        }
        if hb.term > self.current_term || self.role != Role::Follower {
            self.step_down(hb.term);
        }
        self.leader_hint = Some(hb.leader_id);
        true
    }

    pub fn start_election(&mut self) -> Vec<(NodeId, RequestVote)> {
        self.current_term += 1;
        self.role = Role::Candidate;
        self.voted_for = Some(self.id);
        self.leader = None;
        self.leader_hint = None;
        self.votes.clear();
        self.votes.insert(self.id);
        let req = RequestVote {
            term: self.current_term,
            candidate_id: self.id,
            last_index: self.log.last_index(),
            last_term: self.log.last_term(),
        };
        (1..=self.config.n as NodeId)
            .filter(|&p| p != self.id)
            .map(|p| (p, req.clone()))
            .collect()
    }

    pub fn handle_vote_request(&mut self, req: &RequestVote) -> VoteReply {
        if req.term > self.current_term {
            self.step_down(req.term);
        }
        let up_to_date =
            (req.last_term, req.last_index) >= (self.log.last_term(), self.log.last_index());
        let free = self.voted_for.is_none_or(|v| v == req.candidate_id);
        let granted = req.term == self.current_term && up_to_date && free;
        if granted {
            self.voted_for = Some(req.candidate_id);
        }
        VoteReply {
            term: self.current_term,
            from_id: self.id,
            granted,
        }
    }

    /// True exactly when this vote completes the election quorum.
    pub fn on_vote(&mut self, reply: &VoteReply) -> bool {
        if reply.term > self.current_term {
            self.step_down(reply.term);
            return false;
        }
        if self.role != Role::Candidate || reply.term != self.current_term || !reply.granted {
            return false;
        }
        self.votes.insert(reply.from_id);
        self.votes.len() >= self.config.election_quorum()
    }

    pub fn become_leader(&mut self) -> Option<Assignment> {
        self.role = Role::Leader;
        self.leader_hint = Some(self.id);
        self.votes.clear();
        let n = self.config.n;
        let wclock = self.log.max_wclock().max(self.weight_state.wc);
        let assignment = match self.config.algo {
            Algo::Cabinet => Some(Assignment::initial(
                self.id,
                self.config.scheme.weights().to_vec(),
            )),
            Algo::MajorityBaseline => None,
        };
        self.weight_state.w = assignment.as_ref().map_or(1.0, |a| a.weights()[0]);
        let last = self.log.last_index();
        let mut match_index = vec![0; n];
        match_index[slot(self.id)] = last;
        self.leader = Some(LeaderState {
            wclock,
            assignment: assignment.clone(),
            round: None,
            next_index: vec![last + 1; n],
            match_index,
            repair_floor: vec![0; n],
            seq: 0,
        });
        assignment
    }

    /// Broadcasts a configuration for `t_new` as a round of its own. The round
    /// is judged under the new scheme; no batch round can open until it
    /// commits and is finalized.
    pub fn reconfigure_threshold(
        &mut self,
        t_new: usize,
        now: SimTime,
    ) -> Result<(ClusterConfig, Vec<(NodeId, AppendEntriesMsg)>), ConsensusError> {
        let ls = self.leader.as_ref().ok_or(ConsensusError::NotLeader)?;
        if self.config.algo == Algo::MajorityBaseline {
            return Err(ConsensusError::NoThreshold);
        }
        let scheme = generate_scheme(self.config.n, t_new)?;
        if ls.round.as_ref().is_some_and(|r| !r.closed) {
            return Err(ConsensusError::RoundInFlight);
        }
        let weights = ls
            .assignment
            .as_ref()
            .expect("cabinet leader has an assignment")
            .with_weights(scheme.weights().to_vec());
        let quorum = Quorum::Weighted { ct: scheme.ct() };
        let change = ConfigChange {
            epoch: self.config.epoch + 1,
            t: t_new,
            scheme,
        };
        let next = self.config.with_change(&change);
        let msgs = self.open_round(
            RoundKind::Config,
            Payload::Config(Arc::new(change)),
            weights,
            quorum,
            now,
        );
        Ok((next, msgs))
    }
}

#[allow(clippy::too_many_arguments)]
fn build_append(
    log: &Log,
    ls: &mut LeaderState,
    term: Term,
    leader_id: NodeId,
    leader_commit: LogIndex,
    to: NodeId,
    wclock: WClock,
    weight: f64,
) -> AppendEntriesMsg {
    let f = slot(to);
    let from = ls.next_index[f];
    let prev_index = from - 1;
    let entries = log.suffix(from).to_vec();
    ls.next_index[f] = log.last_index() + 1;
    ls.seq += 1;
    AppendEntriesMsg {
        term,
        leader_id,
        prev_index,
        prev_term: log.term_at(prev_index).expect("prev index within log"),
        entries,
        leader_commit,
        wclock,
        weight,
        seq: ls.seq,
    }
}
