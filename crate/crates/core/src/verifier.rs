//! Brute-force oracles and trace auditors.

use crate::consensus::{Algo, LogIndex, NodeId, Term};
use crate::time::{SimDuration, SimTime};
use crate::trace::{ExecutionTrace, RecordKind};
use num_rational::BigRational;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use thiserror::Error;

/// Decimal digits kept when weights are scaled to integers.
pub const SCALE_DIGITS: u32 = 9;
pub const MAX_EXHAUSTIVE_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifierError {
    #[error("exhaustive check limited to n <= {MAX_EXHAUSTIVE_N}, got {0}")]
    TooLarge(usize),
    #[error("threshold t={t} must satisfy 1 <= t < n={n}")]
    BadThreshold { n: usize, t: usize },
    #[error("weights and threshold must be finite and non-negative")]
    BadWeights,
    #[error("surviving weight never exceeds the threshold")]
    Infeasible,
}

/// Result of enumerating every subset of a scheme. Node ids are positions in
/// the input, starting at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExhaustiveReport {
    pub n: usize,
    pub t: usize,
    /// (a) every set of n-t survivors still exceeds ct.
    pub survivors_quorate: bool,
    /// (b) everything outside the t+1 heaviest stays below ct.
    pub cabinet_dominates: bool,
    /// (c) no two disjoint sets both exceed ct.
    pub quorums_intersect: bool,
    /// Smallest failure set (at most t nodes) that leaves no quorum.
    pub liveness_witness: Option<Vec<NodeId>>,
    /// Two disjoint quorums.
    pub safety_witness: Option<(Vec<NodeId>, Vec<NodeId>)>,
    pub subsets: u64,
}

impl ExhaustiveReport {
    pub fn holds(&self) -> bool {
        self.survivors_quorate && self.cabinet_dominates && self.quorums_intersect
    }
}

fn scaled(x: f64) -> Result<i128, VerifierError> {
    if !x.is_finite() || x < 0.0 {
        return Err(VerifierError::BadWeights);
    }
    Ok((x * 10f64.powi(SCALE_DIGITS as i32)).round() as i128)
}

fn members(mask: usize, n: usize) -> Vec<NodeId> {
    (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i as NodeId + 1).collect()
}

pub fn exhaustive_scheme_check(
    weights: &[f64],
    ct: f64,
    t: usize,
) -> Result<ExhaustiveReport, VerifierError> {
    let n = weights.len();
    if n > MAX_EXHAUSTIVE_N {
        return Err(VerifierError::TooLarge(n));
    }
    if t < 1 || t >= n {
        return Err(VerifierError::BadThreshold { n, t });
    }
    let w: Vec<i128> = weights.iter().map(|&x| scaled(x)).collect::<Result<_, _>>()?;
    let ct = scaled(ct)?;
    let full = (1usize << n) - 1;
    let mut sums = vec![0i128; 1 << n];
    for mask in 1..=full {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + w[low];
    }
    let total = sums[full];

    let mut survivors_quorate = true;
    let mut liveness_witness: Option<usize> = None;
    let mut safety_witness = None;
    for mask in 0..=full {
        let size = mask.count_ones() as usize;
        if size <= t && total - sums[mask] <= ct {
            if size == t {
                survivors_quorate = false;
            }
            let better = liveness_witness
                .is_none_or(|m: usize| (size, mask) < (m.count_ones() as usize, m));
            if better {
                liveness_witness = Some(mask);
            }
        }
        if safety_witness.is_none() && sums[mask] > ct && sums[full ^ mask] > ct {
            safety_witness = Some(mask);
        }
    }
    // A failure set smaller than t that already stalls implies one of size t.
    if liveness_witness.is_some() {
        survivors_quorate = false;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[b].cmp(&w[a]).then(a.cmp(&b)));
    let top: i128 = order[..=t].iter().map(|&i| w[i]).sum();
    let cabinet_dominates = total - top < ct;

    Ok(ExhaustiveReport {
        n,
        t,
        survivors_quorate,
        cabinet_dominates,
        quorums_intersect: safety_witness.is_none(),
        liveness_witness: liveness_witness.map(|m| members(m, n)),
        safety_witness: safety_witness.map(|m| (members(m, n), members(full ^ m, n))),
        subsets: 1u64 << n,
    })
}

/// True when the listed nodes (1-based positions) together exceed `ct`,
/// judged in scaled integers.
pub fn is_quorum(weights: &[f64], ct: f64, nodes: &[NodeId]) -> Result<bool, VerifierError> {
    let mut sum = 0i128;
    for &id in nodes {
        sum += scaled(weights[id as usize - 1])?;
    }
    Ok(sum > scaled(ct)?)
}

/// One follower as seen by the commit-time oracle. `rtt` is `None` for a
/// node that never answers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerTiming {
    pub node: NodeId,
    pub weight: f64,
    pub rtt: Option<SimDuration>,
}

/// Commit delay of a round: replies arrive in round-trip order (ties to the
/// lower id) and the round commits at the first prefix whose weight, plus
/// the leader's, exceeds `ct`. Sums are exact.
pub fn commit_time_oracle(
    leader_weight: f64,
    followers: &[FollowerTiming],
    ct: f64,
) -> Result<SimDuration, VerifierError> {
    let exact = |x: f64| BigRational::from_float(x).ok_or(VerifierError::BadWeights);
    let ct = exact(ct)?;
    let mut acc = exact(leader_weight)?;
    if acc > ct {
        return Ok(SimDuration::ZERO);
    }
    let mut live: Vec<&FollowerTiming> = followers.iter().filter(|f| f.rtt.is_some()).collect();
    live.sort_by_key(|f| (f.rtt, f.node));
    for f in live {
        acc += exact(f.weight)?;
        if acc > ct {
            return Ok(f.rtt.expect("filtered"));
        }
    }
    Err(VerifierError::Infeasible)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    DivergentCommit,
    DualLeader,
    StaleLeader,
    WclockRegression,
    WeightMultiset,
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditKind::DivergentCommit => "divergent_commit",
            AuditKind::DualLeader => "dual_leader",
            AuditKind::StaleLeader => "stale_leader",
            AuditKind::WclockRegression => "wclock_regression",
            AuditKind::WeightMultiset => "weight_multiset",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditViolation {
    pub kind: AuditKind,
    pub time: SimTime,
    pub detail: String,
}

impl fmt::Display for AuditViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind, self.time, self.detail)
    }
}

fn multiset(ws: &[f64]) -> Vec<u64> {
    let mut bits: Vec<u64> = ws.iter().map(|w| w.to_bits()).collect();
    bits.sort_unstable();
    bits
}

/// Scans a finished trace for safety and bookkeeping violations. An empty
/// result means the trace is clean.
pub fn audit_trace(trace: &ExecutionTrace) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    let mut flag = |kind, time, detail: String| out.push(AuditViolation { kind, time, detail });

    let mut committed: BTreeMap<LogIndex, (String, NodeId)> = BTreeMap::new();
    let mut last_commit_wclock: HashMap<NodeId, (LogIndex, u64)> = HashMap::new();
    let mut leaders: HashMap<Term, NodeId> = HashMap::new();
    let mut elected = Vec::new();
    let mut schemes: Vec<Vec<u64>> = Vec::new();
    let mut round_weights: HashMap<u64, Vec<u64>> = HashMap::new();
    let mut last_round_commit: Option<u64> = None;
    let baseline = trace.algo == Algo::MajorityBaseline;

    for r in &trace.records {
        match r.kind {
            RecordKind::Commit => {
                let digest = r.digest.clone().unwrap_or_default();
                match committed.get(&r.index) {
                    Some((d, other)) if *d != digest => flag(
                        AuditKind::DivergentCommit,
                        r.time,
                        format!("index {}: n{} has {digest}, n{other} has {d}", r.index, r.from),
                    ),
                    Some(_) => {}
                    None => {
                        committed.insert(r.index, (digest, r.from));
                    }
                }
                if let Some(&(idx, wc)) = last_commit_wclock.get(&r.from) {
                    if r.index > idx && r.wclock <= wc {
                        flag(
                            AuditKind::WclockRegression,
                            r.time,
                            format!(
                                "n{} committed index {} at wclock {} after index {idx} at {wc}",
                                r.from, r.index, r.wclock
                            ),
                        );
                    }
                }
                last_commit_wclock.insert(r.from, (r.index, r.wclock));
            }
            RecordKind::Leader => {
                match leaders.get(&r.term) {
                    Some(&other) if other != r.from => flag(
                        AuditKind::DualLeader,
                        r.time,
                        format!("term {}: n{other} and n{}", r.term, r.from),
                    ),
                    _ => {
                        leaders.insert(r.term, r.from);
                    }
                }
                elected.push(r);
            }
            RecordKind::RoundCommit => {
                if let Some(prev) = last_round_commit {
                    if r.wclock <= prev {
                        flag(
                            AuditKind::WclockRegression,
                            r.time,
                            format!("round commit at wclock {} after {prev}", r.wclock),
                        );
                    }
                }
                last_round_commit = Some(r.wclock);
            }
            RecordKind::Scheme => {
                if let Some(ws) = &r.weights {
                    schemes.push(multiset(ws));
                }
            }
            RecordKind::RoundStart => {
                let ws = r.weights.as_deref().unwrap_or(&[]);
                let ms = multiset(ws);
                let ok = if baseline {
                    ws.len() == trace.n && ws.iter().all(|&w| w == 1.0)
                } else {
                    schemes.contains(&ms)
                };
                let mut ids = r.nodes.clone().unwrap_or_default();
                ids.sort_unstable();
                let perm = ids == (1..=trace.n as NodeId).collect::<Vec<_>>();
                if !ok || !perm {
                    flag(
                        AuditKind::WeightMultiset,
                        r.time,
                        format!("round at wclock {} does not permute a declared scheme", r.wclock),
                    );
                }
                round_weights.insert(r.wclock, ms);
            }
            RecordKind::Assign => {
                let ms = multiset(r.weights.as_deref().unwrap_or(&[]));
                if round_weights.get(&r.wclock) != Some(&ms) {
                    flag(
                        AuditKind::WeightMultiset,
                        r.time,
                        format!("reassignment after wclock {} changes the weights", r.wclock),
                    );
                }
            }
            _ => {}
        }
    }

    for r in elected {
        let Some(floor) = r.floor.filter(|&f| f > 0) else {
            continue;
        };
        let expected = committed.get(&floor).map(|(d, _)| d.as_str());
        if expected != r.digest.as_deref() {
            out.push(AuditViolation {
                kind: AuditKind::StaleLeader,
                time: r.time,
                detail: format!(
                    "n{} elected in term {} without committed index {floor}",
                    r.from, r.term
                ),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;
    use crate::weight_scheme::{generate_scheme, validate_scheme, Violation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Node order n1..n7.
    const LOW_CT: [f64; 7] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    const STEEP: [f64; 7] = [1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6];
    const BALANCED: [f64; 7] = [2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 12.0];

    #[test]
    fn balanced_holds() {
        let r = exhaustive_scheme_check(&BALANCED, 22.5, 2).unwrap();
        assert!(r.holds(), "{r:?}");
        assert_eq!(r.subsets, 128);
    }

    #[test]
    fn low_ct_two_disjoint_quorums() {
        let r = exhaustive_scheme_check(&LOW_CT, 8.0, 2).unwrap();
        assert!(!r.quorums_intersect);
        let (a, b) = r.safety_witness.clone().unwrap();
        assert!(is_quorum(&LOW_CT, 8.0, &a).unwrap() && is_quorum(&LOW_CT, 8.0, &b).unwrap());
        assert!(a.iter().all(|x| !b.contains(x)));
        assert!(is_quorum(&LOW_CT, 8.0, &[6, 7]).unwrap());
        assert!(is_quorum(&LOW_CT, 8.0, &[2, 3, 4]).unwrap());
    }

    #[test]
    fn steep_stalls_without_n7() {
        let r = exhaustive_scheme_check(&STEEP, 555_555.5, 2).unwrap();
        assert!(!r.survivors_quorate);
        assert_eq!(r.liveness_witness, Some(vec![7]));
        assert!(r.quorums_intersect);
    }

    #[test]
    fn size_limits() {
        assert_eq!(exhaustive_scheme_check(&[1.0; 21], 10.5, 2), Err(VerifierError::TooLarge(21)));
        assert!(matches!(
            exhaustive_scheme_check(&BALANCED, 22.5, 7),
            Err(VerifierError::BadThreshold { .. })
        ));
        let s = generate_scheme(20, 9).unwrap();
        assert!(exhaustive_scheme_check(s.weights(), s.ct(), 9).unwrap().holds());
    }

    #[test]
    fn agrees_with_validate_on_random_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = [0usize; 3];
        for _ in 0..1000 {
            let n = rng.random_range(3..=12);
            let t = rng.random_range(1..=(n - 1) / 2);
            let ws: Vec<f64> = (0..n).map(|_| rng.random_range(1..=64) as f64).collect();
            let ct = ws.iter().sum::<f64>() / 2.0;
            let v = validate_scheme(&ws, ct, t);
            let e = exhaustive_scheme_check(&ws, ct, t).unwrap();
            assert_eq!(v.valid, e.holds(), "{ws:?} t={t}");
            assert!(e.quorums_intersect);
            match v.violated {
                Violation::None => seen[0] += 1,
                Violation::LivenessI2 => {
                    assert!(!e.survivors_quorate);
                    seen[1] += 1
                }
                Violation::SafetyI1 => {
                    assert!(e.survivors_quorate && !e.cabinet_dominates);
                    seen[2] += 1
                }
                other => panic!("unexpected {other}"),
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
    }

    fn ms(x: f64) -> Option<SimDuration> {
        Some(SimDuration::from_ms(x))
    }

    #[test]
    fn oracle_cabinet_of_three() {
        // n1 leads with 12; n2 and n3 (10, 8) are fastest.
        let f = [
            FollowerTiming { node: 2, weight: 10.0, rtt: ms(3.0) },
            FollowerTiming { node: 3, weight: 8.0, rtt: ms(4.0) },
            FollowerTiming { node: 4, weight: 6.0, rtt: ms(9.0) },
            FollowerTiming { node: 5, weight: 4.0, rtt: ms(9.0) },
            FollowerTiming { node: 6, weight: 3.0, rtt: ms(10.0) },
            FollowerTiming { node: 7, weight: 2.0, rtt: ms(11.0) },
        ];
        assert_eq!(commit_time_oracle(12.0, &f, 22.5), Ok(SimDuration::from_ms(4.0)));
    }

    #[test]
    fn oracle_infeasible_and_majority() {
        let f = [
            FollowerTiming { node: 2, weight: 10.0, rtt: None },
            FollowerTiming { node: 3, weight: 8.0, rtt: None },
            FollowerTiming { node: 4, weight: 6.0, rtt: None },
            FollowerTiming { node: 5, weight: 4.0, rtt: ms(1.0) },
        ];
        assert_eq!(commit_time_oracle(12.0, &f, 22.5), Err(VerifierError::Infeasible));

        let n = 9;
        let f: Vec<_> = (2..=n)
            .map(|id| FollowerTiming {
                node: id,
                weight: 1.0,
                rtt: ms(10.0 * (n + 1 - id) as f64),
            })
            .collect();
        // Followers answer fastest-first from n9 down; the 4th is n6.
        assert_eq!(commit_time_oracle(1.0, &f, n as f64 / 2.0), Ok(SimDuration::from_ms(40.0)));
    }

    fn leader(time: f64, term: Term, from: NodeId) -> TraceRecord {
        let mut r = TraceRecord::new(SimTime::from_ms(time), RecordKind::Leader, from);
        r.term = term;
        r.floor = Some(0);
        r
    }

    fn empty(algo: Algo) -> ExecutionTrace {
        ExecutionTrace {
            n: 5,
            algo,
            seed: 0,
            records: Vec::new(),
            rounds: Vec::new(),
            end_time: SimTime::ZERO,
            livelock: false,
        }
    }

    #[test]
    fn dual_leader_detected() {
        let mut t = empty(Algo::MajorityBaseline);
        t.records = vec![leader(1.0, 3, 2), leader(2.0, 3, 4), leader(3.0, 4, 4)];
        let v = audit_trace(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, AuditKind::DualLeader);
    }

    #[test]
    fn divergence_and_stale_leader_detected() {
        let mut t = empty(Algo::MajorityBaseline);
        let commit = |node, digest: &str| {
            let mut r = TraceRecord::new(SimTime::ZERO, RecordKind::Commit, node);
            r.index = 1;
            r.wclock = 1;
            r.digest = Some(digest.into());
            r
        };
        let mut l = leader(5.0, 2, 3);
        l.floor = Some(1);
        l.digest = Some("bbbb".into());
        t.records = vec![commit(1, "aaaa"), commit(2, "aaaa"), commit(3, "cccc"), l];
        let kinds: Vec<_> = audit_trace(&t).iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![AuditKind::DivergentCommit, AuditKind::StaleLeader]);
    }

    #[test]
    fn multiset_break_detected() {
        let mut t = empty(Algo::Cabinet);
        let mut s = TraceRecord::new(SimTime::ZERO, RecordKind::Scheme, 1);
        s.weights = Some(vec![5.0, 4.0, 3.0, 2.0, 1.0]);
        let mut start = TraceRecord::new(SimTime::ZERO, RecordKind::RoundStart, 1);
        start.wclock = 1;
        start.nodes = Some(vec![1, 2, 3, 4, 5]);
        start.weights = Some(vec![5.0, 4.0, 3.0, 2.0, 1.0]);
        let mut assign = TraceRecord::new(SimTime::ZERO, RecordKind::Assign, 1);
        assign.wclock = 1;
        assign.weights = Some(vec![5.0, 4.0, 3.0, 3.0, 1.0]);
        t.records = vec![s, start.clone(), assign];
        assert_eq!(audit_trace(&t).len(), 1);
        start.weights = Some(vec![5.0, 4.0, 3.0, 2.0, 2.0]);
        t.records[1] = start;
        t.records.pop();
        assert_eq!(audit_trace(&t)[0].kind, AuditKind::WeightMultiset);
    }

    #[test]
    fn simulated_runs_are_clean() {
        use crate::consensus::ClusterConfig;
        use crate::sim::{run, CrashPlan, CrashStrategy, DelayModel, SimConfig};
        for (algo, strategy) in [
            (Algo::Cabinet, CrashStrategy::Strong),
            (Algo::Cabinet, CrashStrategy::Random),
            (Algo::MajorityBaseline, CrashStrategy::Weak),
        ] {
            let mut c = SimConfig::new(ClusterConfig::new(algo, 7, 2).unwrap(), 3, 25);
            c.delays = DelayModel::d2();
            c.crashes = vec![CrashPlan::new(strategy, 2, 6).with_leader()];
            let trace = run(&c).unwrap();
            assert_eq!(audit_trace(&trace), vec![]);
        }
    }
}
