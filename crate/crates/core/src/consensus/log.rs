use super::{ConfigChange, LogEntry, LogIndex, Payload, Term, WClock};
use crate::digest::Fnv64;
use std::sync::Arc;

/// Chain value before the first entry.
pub const CHAIN_SEED: u64 = 0x6361_6269_6e65_7400;

/// A replicated log, 1-indexed, with a running hash over the prefix ending at
/// each index.
#[derive(Debug, Clone, Default)]
pub struct Log {
    entries: Vec<LogEntry>,
    chain: Vec<u64>,
}

impl Log {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_index(&self) -> LogIndex {
        self.entries.len() as LogIndex
    }

    pub fn last_term(&self) -> Term {
        self.entries.last().map_or(0, |e| e.term)
    }

    pub fn term_at(&self, index: LogIndex) -> Option<Term> {
        if index == 0 {
            Some(0)
        } else {
            self.get(index).map(|e| e.term)
        }
    }

    pub fn get(&self, index: LogIndex) -> Option<&LogEntry> {
        if index == 0 {
            return None;
        }
        self.entries.get(index as usize - 1)
    }

    pub fn get_mut(&mut self, index: LogIndex) -> Option<&mut LogEntry> {
        if index == 0 {
            return None;
        }
        self.entries.get_mut(index as usize - 1)
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    /// Entries from `from` to the end.
    pub fn suffix(&self, from: LogIndex) -> &[LogEntry] {
        let start = (from.max(1) as usize - 1).min(self.entries.len());
        &self.entries[start..]
    }

    pub fn chain_at(&self, index: LogIndex) -> Option<u64> {
        if index == 0 {
            Some(CHAIN_SEED)
        } else {
            self.chain.get(index as usize - 1).copied()
        }
    }

    /// Appends at `last_index() + 1`, whatever `entry.index` says.
    pub fn append(&mut self, mut entry: LogEntry) {
        entry.index = self.last_index() + 1;
        let prev = *self.chain.last().unwrap_or(&CHAIN_SEED);
        let link = Fnv64::new()
            .write_u64(prev)
            .write_u64(entry.digest())
            .finish();
        self.entries.push(entry);
        self.chain.push(link);
    }

    /// Drops `index` and everything after it.
    pub fn truncate_from(&mut self, index: LogIndex) {
        let keep = index.saturating_sub(1) as usize;
        self.entries.truncate(keep);
        self.chain.truncate(keep);
    }

    pub fn max_wclock(&self) -> WClock {
        self.entries.iter().map(|e| e.wclock).max().unwrap_or(0)
    }

    /// First index of the run of entries with the same term as `index`.
    pub fn first_index_of_term_run(&self, index: LogIndex) -> LogIndex {
        let Some(term) = self.term_at(index) else {
            return index;
        };
        let mut i = index;
        while i > 1 && self.term_at(i - 1) == Some(term) {
            i -= 1;
        }
        i
    }

    pub fn latest_config(&self) -> Option<&Arc<ConfigChange>> {
        self.entries.iter().rev().find_map(|e| match &e.payload {
            Payload::Config(c) => Some(c),
            Payload::Batch(_) => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(term: Term, wclock: WClock, byte: u8) -> LogEntry {
        LogEntry {
            index: 0,
            term,
            wclock,
            payload: Payload::Batch(Arc::from(vec![byte])),
            committed_weight: 1.0,
        }
    }

    #[test]
    fn indices_and_terms() {
        let mut log = Log::new();
        assert_eq!(log.last_index(), 0);
        assert_eq!(log.term_at(0), Some(0));
        assert_eq!(log.term_at(1), None);
        log.append(entry(1, 1, 1));
        log.append(entry(1, 2, 2));
        log.append(entry(3, 3, 3));
        assert_eq!(log.last_index(), 3);
        assert_eq!(log.last_term(), 3);
        assert_eq!(log.get(2).unwrap().index, 2);
        assert_eq!(log.suffix(2).len(), 2);
        assert_eq!(log.suffix(9).len(), 0);
        assert_eq!(log.first_index_of_term_run(2), 1);
        assert_eq!(log.first_index_of_term_run(3), 3);
        assert_eq!(log.max_wclock(), 3);
    }

    #[test]
    fn chain_depends_on_prefix() {
        let mut a = Log::new();
        let mut b = Log::new();
        a.append(entry(1, 1, 1));
        a.append(entry(1, 2, 2));
        b.append(entry(1, 1, 9));
        b.append(entry(1, 2, 2));
        assert_eq!(a.get(2).unwrap().digest(), b.get(2).unwrap().digest());
        assert_ne!(a.chain_at(2), b.chain_at(2));

        b.truncate_from(1);
        assert!(b.is_empty());
        b.append(entry(1, 1, 1));
        b.append(entry(1, 2, 2));
        assert_eq!(a.chain_at(2), b.chain_at(2));
    }

    #[test]
    fn committed_weight_does_not_affect_identity() {
        let mut a = Log::new();
        let mut e = entry(1, 1, 1);
        a.append(e.clone());
        e.committed_weight = 7.0;
        let mut b = Log::new();
        b.append(e);
        assert_eq!(a.chain_at(1), b.chain_at(1));
    }
}
