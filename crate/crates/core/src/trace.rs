//! Execution traces as line-delimited JSON.

use crate::consensus::{Algo, LogIndex, NodeId, Term, WClock};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// Active weight scheme: `weights`, `index` = t, `wclock` = epoch.
    Scheme,
    Append,
    AppendOk,
    AppendFail,
    VoteRequest,
    Vote,
    Candidate,
    /// `index` = last log index, `floor` = highest index committed anywhere,
    /// `digest` = the new leader's chain hash at `floor`.
    Leader,
    RoundStart,
    RoundCommit,
    Assign,
    /// `digest` = chain hash at `index` on node `from`.
    Commit,
    Crash,
    Recover,
    Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: RecordKind,
    pub term: Term,
    pub wclock: WClock,
    pub weight: Option<f64>,
    pub index: LogIndex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<SimTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<LogIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TraceRecord {
    pub fn new(time: SimTime, kind: RecordKind, from: NodeId) -> Self {
        TraceRecord {
            time,
            from,
            to: 0,
            kind,
            term: 0,
            wclock: 0,
            weight: None,
            index: 0,
            at: None,
            floor: None,
            count: None,
            digest: None,
            nodes: None,
            weights: None,
            note: None,
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub n: usize,
    pub algo: Algo,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub rounds: Vec<RoundRecord>,
    pub end_time: SimTime,
    pub livelock: bool,
}

/// Per-round summary, one for every committed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Committed batch rounds so far, this one included.
    pub round: u64,
    pub wclock: WClock,
    pub kind: String,
    pub t: usize,
    pub epoch: u64,
    pub leader: NodeId,
    pub start: SimTime,
    pub commit: SimTime,
    /// Previous commit (or run start): the round's wall-clock window opens here.
    pub since: SimTime,
    pub replies_counted: usize,
    pub cabinet: Vec<NodeId>,
    pub regime: String,
    pub crashed: usize,
    pub ops: usize,
}

impl RoundRecord {
    pub fn latency_ms(&self) -> f64 {
        (self.commit - self.start).as_ms()
    }

    pub fn wall_ms(&self) -> f64 {
        (self.commit - self.since).as_ms()
    }
}

impl ExecutionTrace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let mut r = TraceRecord::new(SimTime::from_micros(1_234_567), RecordKind::Append, 1);
        r.to = 3;
        r.term = 2;
        r.wclock = 9;
        r.weight = Some(1.1995928859012017);
        r.index = 4;
        r.at = Some(SimTime::from_micros(1_334_568));
        let trace = ExecutionTrace {
            n: 3,
            algo: Algo::Cabinet,
            seed: 1,
            records: vec![r.clone(), TraceRecord::new(SimTime::ZERO, RecordKind::Crash, 2)],
            rounds: vec![],
            end_time: SimTime::ZERO,
            livelock: false,
        };
        let text = trace.to_jsonl();
        assert!(text.starts_with(
            r#"{"time":1234.567,"from":1,"to":3,"kind":"append","term":2,"wclock":9,"weight":1.1995928859012017,"index":4,"at":1334.568}"#
        ));
        let back = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, trace.records);
    }
}
