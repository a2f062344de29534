use super::crash::select_targets;
use super::delay::sample_delay;
use super::rng::{Purpose, Streams};
use super::{SimConfig, SimError};
use crate::consensus::{
    AppendEntriesMsg, Assignment, Message, NodeId, NodeState, Payload, RoundKind, RoundStatus,
    Term, WClock,
};
use crate::consensus::Algo;
use crate::digest::hex;
use crate::time::{SimDuration, SimTime};
use crate::trace::{ExecutionTrace, RecordKind, RoundRecord, TraceRecord};
use crate::workload::{Batch, BatchStream};
use rand::Rng;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::Arc;

#[derive(Debug)]
enum EventKind {
    Deliver {
        from: NodeId,
        to: NodeId,
        from_inc: u64,
        to_inc: u64,
        msg: Message,
    },
    /// A follower finished working through an append.
    Served {
        node: NodeId,
        inc: u64,
        from: NodeId,
        msg: AppendEntriesMsg,
    },
    ElectionCheck {
        node: NodeId,
        gen: u64,
    },
    HeartbeatTick {
        leader: NodeId,
        term: Term,
    },
    StartRound {
        leader: NodeId,
        term: Term,
    },
    Finalize {
        leader: NodeId,
        term: Term,
        wclock: WClock,
        commit: SimTime,
    },
    Recover {
        node: NodeId,
    },
}

#[derive(Debug)]
struct Event {
    time: SimTime,
    tiebreak: NodeId,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}
impl Event {
    fn key(&self) -> (SimTime, NodeId, u64) {
        (self.time, self.tiebreak, self.seq)
    }
}

struct Kill {
    round: u64,
    plan: usize,
    count: usize,
    done: bool,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    n: usize,
    nodes: Vec<NodeState>,
    alive: Vec<bool>,
    incarnation: Vec<u64>,
    busy_until: Vec<SimTime>,
    last_contact: Vec<SimTime>,
    timer_gen: Vec<u64>,
    link_last: HashMap<(NodeId, NodeId), SimTime>,
    last_send: HashMap<(NodeId, NodeId), SimTime>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: SimTime,
    streams: Streams,
    batches: BatchStream,
    batch_cost: HashMap<u64, f64>,
    batch_ops: usize,
    records: Vec<TraceRecord>,
    rounds: Vec<RoundRecord>,
    committed: u64,
    last_progress: SimTime,
    last_commit: SimTime,
    reported: Vec<u64>,
    max_committed: u64,
    kills: Vec<Kill>,
    reconfigs: BTreeMap<u64, Vec<usize>>,
    pending_reconfig: Option<usize>,
    last_assignment: Option<Assignment>,
    regime: Option<String>,
    crashed: usize,
    hb: SimDuration,
    cap: SimDuration,
    election_range: (f64, f64),
    stop: bool,
}

/// Runs one simulation to completion.
pub fn run(cfg: &SimConfig) -> Result<ExecutionTrace, SimError> {
    cfg.validate().map_err(SimError::Config)?;
    let mut engine = Engine::new(cfg);
    engine.start();
    engine.run_loop()
}

fn slot(id: NodeId) -> usize {
    id as usize - 1
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let n = cfg.cluster.n;
        let o = &cfg.options;
        let max_delay = cfg.delays.max_delay_ms();
        let (lo, hi) = cfg.cluster.election_timeout_range;
        let min = lo.max(3.0 * max_delay);
        let election_range = (min, min * hi / lo);
        let hb = SimDuration::from_ms(o.heartbeat_ms.unwrap_or(election_range.0 / 3.0));
        let max_service = (1..=n as NodeId)
            .map(|id| cfg.profile.service_ms(id))
            .fold(0.0, f64::max);
        let max_load = o.load_changes.iter().map(|l| l.factor).fold(1.0, f64::max);
        let kind = if o.kind_weighted_service { 4.0 } else { 1.0 };
        let expected = 2.0 * max_delay + max_service * max_load * kind + 1.0;
        let cap_ms = o
            .time_cap_ms
            .unwrap_or_else(|| (1000.0 * expected).max(10.0 * election_range.1));
        let mut kills = Vec::new();
        for (i, plan) in cfg.crashes.iter().enumerate() {
            for (round, count) in plan.schedule() {
                kills.push(Kill {
                    round,
                    plan: i,
                    count,
                    done: false,
                });
            }
        }
        let mut reconfigs: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for r in &o.reconfigurations {
            reconfigs.entry(r.after_round).or_default().push(r.t);
        }
        let streams = Streams::new(cfg.seed);
        let batches = BatchStream::new(
            cfg.mix.clone(),
            cfg.batch_size,
            Streams::stream(cfg.seed, 0, 0, Purpose::Workload),
        );
        Engine {
            cfg,
            n,
            nodes: (1..=n as NodeId)
                .map(|id| NodeState::new(id, cfg.cluster.clone()))
                .collect(),
            alive: vec![true; n],
            incarnation: vec![0; n],
            busy_until: vec![SimTime::ZERO; n],
            last_contact: vec![SimTime::ZERO; n],
            timer_gen: vec![0; n],
            link_last: HashMap::new(),
            last_send: HashMap::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            streams,
            batches,
            batch_cost: HashMap::new(),
            batch_ops: cfg.batch_size,
            records: Vec::new(),
            rounds: Vec::new(),
            committed: 0,
            last_progress: SimTime::ZERO,
            last_commit: SimTime::ZERO,
            reported: vec![0; n],
            max_committed: 0,
            kills,
            reconfigs,
            pending_reconfig: None,
            last_assignment: None,
            regime: None,
            crashed: 0,
            hb,
            cap: SimDuration::from_ms(cap_ms),
            election_range,
            stop: false,
        }
    }

    fn push(&mut self, time: SimTime, tiebreak: NodeId, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            tiebreak,
            seq: self.seq,
            kind,
        }));
    }

    fn record(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    fn scheme_record(&mut self, node: NodeId) {
        let st = &self.nodes[slot(node)];
        let cfg = st.config();
        let mut r = TraceRecord::new(self.now, RecordKind::Scheme, node);
        r.term = st.current_term();
        r.wclock = cfg.epoch;
        r.index = cfg.t as u64;
        r.weights = Some(cfg.scheme.weights().to_vec());
        r.weight = Some(cfg.scheme.ct());
        r.note = Some(cfg.algo.to_string());
        self.record(r);
    }

    fn start(&mut self) {
        let leader = self.cfg.options.bootstrap_leader;
        for i in 0..self.n {
            let id = (i + 1) as NodeId;
            let timeout = self.draw_timeout(id);
            self.nodes[i].set_election_timeout(timeout);
            if let Some(a) = self.nodes[i].bootstrap(leader, 1) {
                self.last_assignment = Some(a);
            }
        }
        self.scheme_record(leader);
        if let Some(t) = self.reconfigs.get(&0).and_then(|v| v.last().copied()) {
            self.pending_reconfig = Some(t);
        }
        self.apply_kills(leader);
        for i in 0..self.n {
            let id = (i + 1) as NodeId;
            if id != leader && self.alive[i] {
                self.arm_timer(id);
            }
        }
        if self.alive[slot(leader)] {
            self.on_become_leader(leader);
        } else {
            self.nodes[slot(leader)].restart();
        }
    }

    fn draw_timeout(&mut self, id: NodeId) -> f64 {
        let (lo, hi) = self.election_range;
        let rng = self.streams.get(id, 0, Purpose::Election);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn arm_timer(&mut self, id: NodeId) {
        let i = slot(id);
        self.timer_gen[i] += 1;
        let at = self.last_contact[i] + SimDuration::from_ms(self.nodes[i].election_timeout());
        let gen = self.timer_gen[i];
        self.push(at, id, EventKind::ElectionCheck { node: id, gen });
    }

    fn run_loop(mut self) -> Result<ExecutionTrace, SimError> {
        let mut livelock = true;
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time.saturating_since(self.last_progress) > self.cap {
                self.now = self.last_progress + self.cap;
                break;
            }
            self.now = ev.time;
            self.handle(ev.kind);
            if self.stop {
                livelock = false;
                break;
            }
        }
        let trace = ExecutionTrace {
            n: self.n,
            algo: self.cfg.cluster.algo,
            seed: self.cfg.seed,
            records: self.records,
            rounds: self.rounds,
            end_time: self.now,
            livelock,
        };
        if livelock {
            Err(SimError::Livelock {
                cap_ms: self.cap.as_ms(),
                rounds: self.committed,
                trace: Box::new(trace),
            })
        } else {
            Ok(trace)
        }
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::Deliver {
                from,
                to,
                from_inc,
                to_inc,
                msg,
            } => {
                let (f, t) = (slot(from), slot(to));
                if !self.alive[t]
                    || !self.alive[f]
                    || self.incarnation[t] != to_inc
                    || self.incarnation[f] != from_inc
                {
                    return;
                }
                let was_leader = self.nodes[t].is_leader();
                self.deliver(from, to, msg);
                self.after(to, was_leader);
            }
            EventKind::Served {
                node,
                inc,
                from,
                msg,
            } => {
                let i = slot(node);
                if !self.alive[i] || self.incarnation[i] != inc {
                    return;
                }
                let was_leader = self.nodes[i].is_leader();
                let reply = self.nodes[i].handle_append_entries(&msg);
                if reply.term == msg.term {
                    self.last_contact[i] = self.now;
                }
                self.report_commits(node);
                let mut r = TraceRecord::new(
                    self.now,
                    if reply.success {
                        RecordKind::AppendOk
                    } else {
                        RecordKind::AppendFail
                    },
                    node,
                );
                r.to = from;
                r.term = reply.term;
                r.wclock = reply.echoed_wclock;
                r.weight = Some(reply.echoed_weight);
                r.index = if reply.success { reply.acked_index } else { reply.hint };
                self.send(node, from, Message::AppendReply(reply), Purpose::Reply, Some(r));
                self.after(node, was_leader);
            }
            EventKind::ElectionCheck { node, gen } => self.election_check(node, gen),
            EventKind::HeartbeatTick { leader, term } => self.heartbeat_tick(leader, term),
            EventKind::StartRound { leader, term } => self.start_round(leader, term),
            EventKind::Finalize {
                leader,
                term,
                wclock,
                commit,
            } => self.finalize(leader, term, wclock, commit),
            EventKind::Recover { node } => self.recover(node),
        }
    }

    /// Re-arms the election timer of a node that just lost leadership.
    fn after(&mut self, node: NodeId, was_leader: bool) {
        if was_leader && !self.nodes[slot(node)].is_leader() {
            self.arm_timer(node);
        }
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let t = slot(to);
        match msg {
            Message::Append(m) => {
                if m.term >= self.nodes[t].current_term() {
                    self.last_contact[t] = self.now;
                }
                let start = self.now.max(self.busy_until[t]);
                let done = start + self.service(to, &m);
                self.busy_until[t] = done;
                let inc = self.incarnation[t];
                self.push(
                    done,
                    to,
                    EventKind::Served {
                        node: to,
                        inc,
                        from,
                        msg: m,
                    },
                );
            }
            Message::AppendReply(r) => {
                let node = &mut self.nodes[t];
                if r.success {
                    if let Ok(RoundStatus::Committed) = node.on_append_reply(&r, self.now) {
                        self.on_commit(to);
                    }
                } else if let Some((peer, m)) = node.on_append_failure(&r) {
                    self.send_append(to, peer, m, true);
                }
            }
            Message::RequestVote(req) => {
                let v = self.nodes[t].handle_vote_request(&req);
                if v.granted {
                    self.last_contact[t] = self.now;
                }
                let mut r = TraceRecord::new(self.now, RecordKind::Vote, to);
                r.to = from;
                r.term = v.term;
                r.note = Some(if v.granted { "granted" } else { "denied" }.into());
                self.send(to, from, Message::Vote(v), Purpose::Vote, Some(r));
            }
            Message::Vote(v) => {
                if self.nodes[t].on_vote(&v) {
                    self.nodes[t].become_leader();
                    self.on_become_leader(to);
                }
            }
            Message::Heartbeat(hb) => {
                if self.nodes[t].handle_heartbeat(&hb) {
                    self.last_contact[t] = self.now;
                }
            }
        }
    }

    fn load_factor(&self, node: NodeId) -> f64 {
        let round = self.committed + 1;
        let now = self.now.as_ms();
        self.cfg
            .options
            .load_changes
            .iter()
            .filter(|l| l.node == node && l.active(round, now))
            .map(|l| l.factor)
            .product()
    }

    fn service(&self, node: NodeId, m: &AppendEntriesMsg) -> SimDuration {
        if m.entries.is_empty() {
            return SimDuration::ZERO;
        }
        let unit = self.cfg.profile.service_ms(node) * self.load_factor(node);
        let units: f64 = m
            .entries
            .iter()
            .map(|e| match &e.payload {
                Payload::Batch(bytes) if self.cfg.options.kind_weighted_service => Batch::decode_id(bytes)
                    .and_then(|id| self.batch_cost.get(&id).copied())
                    .unwrap_or(1.0),
                _ => 1.0,
            })
            .sum();
        SimDuration::from_ms(unit * units)
    }

    fn rotation(&self) -> u64 {
        self.cfg.delays.rotation(self.committed)
    }

    fn send(
        &mut self,
        from: NodeId,
        to: NodeId,
        msg: Message,
        purpose: Purpose,
        record: Option<TraceRecord>,
    ) {
        let rotation = self.rotation();
        let d = sample_delay(
            &self.cfg.delays,
            self.n,
            from,
            to,
            self.now,
            rotation,
            self.streams.get(from, to, purpose),
        );
        let link = self.link_last.entry((from, to)).or_insert(SimTime::ZERO);
        let at = (self.now + d).max(*link);
        *link = at;
        self.last_send.insert((from, to), self.now);
        if let Some(mut r) = record {
            r.at = Some(at);
            self.record(r);
        }
        let (from_inc, to_inc) = (self.incarnation[slot(from)], self.incarnation[slot(to)]);
        self.push(
            at,
            from,
            EventKind::Deliver {
                from,
                to,
                from_inc,
                to_inc,
                msg,
            },
        );
    }

    fn send_append(&mut self, from: NodeId, to: NodeId, m: AppendEntriesMsg, repair: bool) {
        let mut r = TraceRecord::new(self.now, RecordKind::Append, from);
        r.to = to;
        r.term = m.term;
        r.wclock = m.wclock;
        r.weight = Some(m.weight);
        r.index = m.prev_index + m.entries.len() as u64;
        r.floor = Some(m.prev_index);
        if repair {
            r.note = Some("repair".into());
        }
        self.send(from, to, Message::Append(m), Purpose::Append, Some(r));
    }

    fn report_commits(&mut self, node: NodeId) {
        let i = slot(node);
        let commit = self.nodes[i].commit_index();
        while self.reported[i] < commit {
            let idx = self.reported[i] + 1;
            self.reported[i] = idx;
            let log = self.nodes[i].log();
            let Some(e) = log.get(idx) else { break };
            let mut r = TraceRecord::new(self.now, RecordKind::Commit, node);
            r.index = idx;
            r.term = e.term;
            r.wclock = e.wclock;
            r.digest = log.chain_at(idx).map(hex);
            r.note = Some(if e.payload.is_config() { "config" } else { "batch" }.into());
            self.records.push(r);
            self.max_committed = self.max_committed.max(idx);
        }
    }

    fn on_become_leader(&mut self, leader: NodeId) {
        let i = slot(leader);
        let st = &self.nodes[i];
        let mut r = TraceRecord::new(self.now, RecordKind::Leader, leader);
        r.term = st.current_term();
        r.index = st.log().last_index();
        r.wclock = st.leader_wclock().unwrap_or(0);
        r.floor = Some(self.max_committed);
        r.digest = Some(match st.log().chain_at(self.max_committed) {
            Some(d) => hex(d),
            None => "missing".into(),
        });
        let term = st.current_term();
        if let Some(a) = st.assignment() {
            r.nodes = Some(a.ranking().to_vec());
            r.weights = Some(a.weights().to_vec());
            self.last_assignment = Some(a.clone());
        }
        self.record(r);
        self.push(self.now + self.hb, leader, EventKind::HeartbeatTick { leader, term });
        self.push(self.now, leader, EventKind::StartRound { leader, term });
    }

    fn election_check(&mut self, node: NodeId, gen: u64) {
        let i = slot(node);
        if !self.alive[i] || gen != self.timer_gen[i] || self.nodes[i].is_leader() {
            return;
        }
        let deadline = self.last_contact[i] + SimDuration::from_ms(self.nodes[i].election_timeout());
        if self.now < deadline {
            self.timer_gen[i] += 1;
            let gen = self.timer_gen[i];
            self.push(deadline, node, EventKind::ElectionCheck { node, gen });
            return;
        }
        let timeout = self.draw_timeout(node);
        self.nodes[i].set_election_timeout(timeout);
        self.last_contact[i] = self.now;
        let reqs = self.nodes[i].start_election();
        let term = self.nodes[i].current_term();
        let mut r = TraceRecord::new(self.now, RecordKind::Candidate, node);
        r.term = term;
        r.index = self.nodes[i].log().last_index();
        self.record(r);
        for (peer, req) in reqs {
            let mut r = TraceRecord::new(self.now, RecordKind::VoteRequest, node);
            r.to = peer;
            r.term = term;
            r.index = req.last_index;
            self.send(node, peer, Message::RequestVote(req), Purpose::Vote, Some(r));
        }
        self.arm_timer(node);
    }

    fn heartbeat_tick(&mut self, leader: NodeId, term: Term) {
        let i = slot(leader);
        let st = &self.nodes[i];
        if !self.alive[i] || !st.is_leader() || st.current_term() != term {
            return;
        }
        let Some(hb) = st.heartbeat() else { return };
        for peer in 1..=self.n as NodeId {
            if peer == leader {
                continue;
            }
            let last = self.last_send.get(&(leader, peer)).copied().unwrap_or(SimTime::ZERO);
            if self.now.saturating_since(last) >= self.hb {
                self.send(leader, peer, Message::Heartbeat(hb.clone()), Purpose::Heartbeat, None);
            }
        }
        self.push(self.now + self.hb, leader, EventKind::HeartbeatTick { leader, term });
    }

    fn update_regime(&mut self, node: NodeId) -> String {
        let label = self.cfg.delays.regime_label(self.now, self.rotation());
        if self.regime.as_deref() != Some(label.as_str()) {
            let mut r = TraceRecord::new(self.now, RecordKind::Regime, node);
            r.index = self.committed;
            r.note = Some(label.clone());
            self.record(r);
            self.regime = Some(label.clone());
        }
        label
    }

    fn start_round(&mut self, leader: NodeId, term: Term) {
        let i = slot(leader);
        {
            let st = &self.nodes[i];
            if !self.alive[i] || !st.is_leader() || st.current_term() != term {
                return;
            }
            if st.round().is_some_and(|r| !r.closed) {
                return;
            }
        }
        self.update_regime(leader);
        let mut msgs = None;
        if let Some(t) = self.pending_reconfig.take() {
            if self.cfg.cluster.algo == Algo::Cabinet {
                if let Ok((_, m)) = self.nodes[i].reconfigure_threshold(t, self.now) {
                    self.scheme_record(leader);
                    msgs = Some((m, "config"));
                }
            }
        }
        let (msgs, note) = match msgs {
            Some(m) => m,
            None => {
                let batch = self.batches.next_batch();
                self.batch_cost.insert(batch.batch_id, batch.cost_factor());
                self.batch_ops = batch.size();
                let bytes: Arc<[u8]> = Arc::from(batch.encode());
                match self.nodes[i].start_round(bytes, self.now) {
                    Ok(m) => (m, "batch"),
                    Err(_) => return,
                }
            }
        };
        let st = &self.nodes[i];
        let round = st.round().expect("round just opened");
        let mut r = TraceRecord::new(self.now, RecordKind::RoundStart, leader);
        r.term = term;
        r.wclock = round.wclock;
        r.index = round.index;
        r.weight = round.ct();
        r.count = Some(st.config().t as u64);
        r.nodes = Some(round.weights.ranking().to_vec());
        r.weights = Some(round.weights.weights().to_vec());
        r.note = Some(note.into());
        self.record(r);
        for (peer, m) in msgs {
            self.send_append(leader, peer, m, false);
        }
    }

    fn on_commit(&mut self, leader: NodeId) {
        self.report_commits(leader);
        let i = slot(leader);
        let st = &self.nodes[i];
        let round = st.round().expect("committed round");
        let commit = round.committed_at.expect("committed round");
        let batch = round.kind == RoundKind::Batch;
        if batch {
            self.committed += 1;
        }
        self.last_progress = self.now;
        let cfg = st.config();
        let cabinet: Vec<NodeId> = match cfg.algo {
            Algo::Cabinet => round.weights.cabinet(cfg.t + 1).to_vec(),
            Algo::MajorityBaseline => std::iter::once(leader)
                .chain(round.queue.nodes().take(cfg.majority().saturating_sub(1)))
                .collect(),
        };
        let wclock = round.wclock;
        let term = st.current_term();
        let mut r = TraceRecord::new(self.now, RecordKind::RoundCommit, leader);
        r.term = term;
        r.wclock = wclock;
        r.index = round.index;
        r.weight = Some(round.accumulator);
        r.count = Some(round.replies_at_commit as u64);
        r.nodes = Some(round.queue.nodes().collect());
        r.note = Some(if batch { "batch" } else { "config" }.into());
        let rec = RoundRecord {
            round: self.committed,
            wclock,
            kind: if batch { "batch" } else { "config" }.into(),
            t: cfg.t,
            epoch: cfg.epoch,
            leader,
            start: round.started_at,
            commit,
            since: self.last_commit,
            replies_counted: round.replies_at_commit,
            cabinet,
            regime: self.regime.clone().unwrap_or_default(),
            crashed: self.crashed,
            ops: if batch { self.batch_ops } else { 0 },
        };
        let latency = commit - round.started_at;
        self.record(r);
        self.rounds.push(rec);
        self.last_commit = commit;
        if batch {
            if let Some(ts) = self.reconfigs.get(&self.committed) {
                self.pending_reconfig = ts.last().copied();
            }
        }
        let gap = SimDuration::from_ms(self.cfg.options.inter_round_gap_ms);
        let wait = latency.mul_f64(self.cfg.options.grace_factor).min(gap);
        if wait == SimDuration::ZERO {
            self.finalize(leader, term, wclock, commit);
        } else {
            self.push(
                self.now + wait,
                leader,
                EventKind::Finalize {
                    leader,
                    term,
                    wclock,
                    commit,
                },
            );
        }
    }

    fn finalize(&mut self, leader: NodeId, term: Term, wclock: WClock, commit: SimTime) {
        let i = slot(leader);
        let owns = {
            let st = &self.nodes[i];
            self.alive[i]
                && st.is_leader()
                && st.current_term() == term
                && st.round().is_some_and(|r| r.wclock == wclock && !r.closed)
        };
        if owns {
            if let Ok(Some(a)) = self.nodes[i].finalize_round() {
                let mut r = TraceRecord::new(self.now, RecordKind::Assign, leader);
                r.term = term;
                r.wclock = wclock;
                r.nodes = Some(a.ranking().to_vec());
                r.weights = Some(a.weights().to_vec());
                self.record(r);
                self.last_assignment = Some(a);
            }
        }
        self.apply_kills(leader);
        if self.committed >= self.cfg.rounds {
            self.stop = true;
            return;
        }
        let gap = SimDuration::from_ms(self.cfg.options.inter_round_gap_ms);
        let at = (commit + gap).max(self.now);
        self.push(at, leader, EventKind::StartRound { leader, term });
    }

    fn apply_kills(&mut self, leader: NodeId) {
        let round = self.committed;
        let due: Vec<(usize, usize)> = self
            .kills
            .iter_mut()
            .filter(|k| !k.done && k.round == round)
            .map(|k| {
                k.done = true;
                (k.plan, k.count)
            })
            .collect();
        let leader = self.nodes[slot(leader)]
            .is_leader()
            .then_some(leader)
            .or_else(|| self.last_assignment.as_ref().map(|a| a.leader()));
        for (plan_idx, count) in due {
            let plan = &self.cfg.crashes[plan_idx];
            let assignment = match self.cfg.cluster.algo {
                Algo::Cabinet => self.last_assignment.as_ref(),
                Algo::MajorityBaseline => None,
            };
            let rng = self.streams.get(0, 0, Purpose::Crash);
            let targets = select_targets(plan, count, assignment, leader, &self.alive, rng);
            let recover = plan.recover_after_ms;
            for id in targets {
                self.crash(id, plan.strategy.to_string());
                if let Some(ms) = recover {
                    self.push(self.now + SimDuration::from_ms(ms), id, EventKind::Recover { node: id });
                }
            }
        }
    }

    fn crash(&mut self, id: NodeId, why: String) {
        let i = slot(id);
        if !self.alive[i] {
            return;
        }
        self.alive[i] = false;
        self.incarnation[i] += 1;
        self.busy_until[i] = self.now;
        self.crashed += 1;
        let mut r = TraceRecord::new(self.now, RecordKind::Crash, id);
        r.term = self.nodes[i].current_term();
        r.index = self.committed;
        r.note = Some(why);
        self.record(r);
    }

    fn recover(&mut self, id: NodeId) {
        let i = slot(id);
        if self.alive[i] {
            return;
        }
        self.alive[i] = true;
        self.incarnation[i] += 1;
        self.crashed -= 1;
        self.nodes[i].restart();
        self.last_contact[i] = self.now;
        self.busy_until[i] = self.now;
        let timeout = self.draw_timeout(id);
        self.nodes[i].set_election_timeout(timeout);
        let mut r = TraceRecord::new(self.now, RecordKind::Recover, id);
        r.term = self.nodes[i].current_term();
        r.index = self.nodes[i].log().last_index();
        self.record(r);
        self.arm_timer(id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::ClusterConfig;
    use crate::sim::{CrashPlan, CrashStrategy, DelayModel, HeterogeneityProfile};

    fn cfg(algo: Algo, n: usize, t: usize) -> SimConfig {
        let mut c = SimConfig::new(ClusterConfig::new(algo, n, t).unwrap(), 7, 30);
        c.delays = DelayModel::d1(20.0);
        c.profile = HeterogeneityProfile::heterogeneous(n, 5.0);
        c.batch_size = 10;
        c
    }

    #[test]
    fn commits_requested_rounds() {
        for algo in [Algo::Cabinet, Algo::MajorityBaseline] {
            let trace = run(&cfg(algo, 11, 3)).unwrap();
            assert_eq!(trace.rounds.iter().filter(|r| r.kind == "batch").count(), 30);
            assert!(!trace.livelock);
            assert!(trace.rounds.windows(2).all(|w| w[0].wclock < w[1].wclock));
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let a = run(&cfg(Algo::Cabinet, 9, 2)).unwrap();
        let b = run(&cfg(Algo::Cabinet, 9, 2)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(Algo::Cabinet, 9, 2);
        other.seed = 8;
        assert_ne!(run(&other).unwrap().records, a.records);
    }

    #[test]
    fn survives_crashing_t_nodes() {
        let mut c = cfg(Algo::Cabinet, 11, 3);
        c.crashes = vec![CrashPlan::new(CrashStrategy::Strong, 3, 5)];
        let trace = run(&c).unwrap();
        assert_eq!(trace.of_kind(RecordKind::Crash).count(), 3);
        assert_eq!(trace.rounds.last().unwrap().round, 30);
    }

    #[test]
    fn leader_crash_triggers_election() {
        let mut c = cfg(Algo::Cabinet, 7, 2);
        c.crashes = vec![CrashPlan::new(CrashStrategy::Strong, 1, 5).with_leader()];
        let trace = run(&c).unwrap();
        let leaders: Vec<_> = trace.of_kind(RecordKind::Leader).collect();
        assert!(leaders.len() >= 2);
        assert_ne!(leaders[1].from, 1);
        assert_eq!(trace.rounds.last().unwrap().round, 30);
    }

    #[test]
    fn too_many_crashes_livelock() {
        let mut c = cfg(Algo::MajorityBaseline, 5, 2);
        c.crashes = vec![CrashPlan::new(CrashStrategy::Random, 3, 3)];
        c.options.time_cap_ms = Some(5_000.0);
        match run(&c) {
            Err(SimError::Livelock { trace, rounds, .. }) => {
                assert!(trace.livelock);
                assert!((3..30).contains(&rounds));
            }
            other => panic!("expected livelock, got {other:?}"),
        }
    }

    #[test]
    fn reconfiguration_changes_threshold() {
        let mut c = cfg(Algo::Cabinet, 11, 5);
        c.options.reconfigurations = vec![crate::sim::Reconfiguration { after_round: 10, t: 2 }];
        let trace = run(&c).unwrap();
        let config = trace.rounds.iter().find(|r| r.kind == "config").unwrap();
        assert_eq!(config.t, 2);
        assert_eq!(trace.rounds.last().unwrap().t, 2);
        assert_eq!(trace.of_kind(RecordKind::Scheme).count(), 2);
    }
}
