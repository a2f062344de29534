//! Synthetic operation batches.
//!
//! Mixes are plain data. The built-in table is only a default and every
//! scenario may replace it.

use crate::digest::Fnv64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    Read,
    Update,
    Scan,
    Insert,
    NewOrder,
    Payment,
    OrderStatus,
    Delivery,
    StockLevel,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Read,
        OpKind::Update,
        OpKind::Scan,
        OpKind::Insert,
        OpKind::NewOrder,
        OpKind::Payment,
        OpKind::OrderStatus,
        OpKind::Delivery,
        OpKind::StockLevel,
    ];

    /// Relative follower cost when service is kind-weighted.
    pub fn cost_factor(self) -> f64 {
        match self {
            OpKind::Scan => 4.0,
            _ => 1.0,
        }
    }

    fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("mix `{name}`: ratios sum to {sum}, expected 1")]
    BadSum { name: String, sum: f64 },
    #[error("mix `{name}`: negative or non-finite ratio")]
    BadRatio { name: String },
    #[error("mix `{name}`: payload_bytes must be positive")]
    EmptyPayload { name: String },
    #[error("unknown mix `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationMix {
    pub name: String,
    pub ratios: BTreeMap<OpKind, f64>,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
    #[serde(default = "default_keyspace")]
    pub keyspace: u64,
}

fn default_payload() -> usize {
    100
}

fn default_keyspace() -> u64 {
    100_000
}

impl OperationMix {
    pub fn new(name: &str, ratios: &[(OpKind, f64)]) -> Result<Self, MixError> {
        let mix = OperationMix {
            name: name.to_string(),
            ratios: ratios.iter().copied().collect(),
            payload_bytes: default_payload(),
            keyspace: default_keyspace(),
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<(), MixError> {
        let name = self.name.clone();
        if self.ratios.values().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(MixError::BadRatio { name });
        }
        let sum: f64 = self.ratios.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MixError::BadSum { name, sum });
        }
        if self.payload_bytes == 0 {
            return Err(MixError::EmptyPayload { name });
        }
        Ok(())
    }

    /// Built-in defaults: YCSB A-F and a TPC-C style transaction mix.
    pub fn named(name: &str) -> Result<Self, MixError> {
        use OpKind::*;
        let ratios: &[(OpKind, f64)] = match name.to_ascii_uppercase().as_str() {
            "A" => &[(Read, 0.5), (Update, 0.5)],
            "B" => &[(Read, 0.95), (Update, 0.05)],
            "C" => &[(Read, 1.0)],
            "D" => &[(Read, 0.95), (Insert, 0.05)],
            "E" => &[(Scan, 0.95), (Insert, 0.05)],
            // Read-modify-write counted as its read and its update.
            "F" => &[(Read, 0.5), (Update, 0.5)],
            "TPCC" => &[
                (NewOrder, 0.45),
                (Payment, 0.43),
                (OrderStatus, 0.04),
                (Delivery, 0.04),
                (StockLevel, 0.04),
            ],
            _ => return Err(MixError::Unknown(name.to_string())),
        };
        let canonical = if name.eq_ignore_ascii_case("tpcc") {
            "tpcc".to_string()
        } else {
            name.to_ascii_uppercase()
        };
        OperationMix::new(&canonical, ratios)
    }

    fn sample(&self, rng: &mut impl Rng) -> OpKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = None;
        for (&kind, &p) in &self.ratios {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some(kind);
            if u < acc {
                return kind;
            }
        }
        last.expect("validated mix has positive mass")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operation {
    pub kind: OpKind,
    pub key: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_id: u64,
    pub operations: Vec<Operation>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.operations.len()
    }

    pub fn counts(&self) -> BTreeMap<OpKind, usize> {
        let mut out = BTreeMap::new();
        for op in &self.operations {
            *out.entry(op.kind).or_insert(0) += 1;
        }
        out
    }

    /// Mean per-operation cost factor.
    pub fn cost_factor(&self) -> f64 {
        if self.operations.is_empty() {
            return 1.0;
        }
        self.operations.iter().map(|o| o.kind.cost_factor()).sum::<f64>()
            / self.operations.len() as f64
    }

    /// Compact wire form: id, count, then kind, key and a payload digest per
    /// operation.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.operations.len() * 21);
        out.extend_from_slice(&self.batch_id.to_le_bytes());
        out.extend_from_slice(&(self.operations.len() as u64).to_le_bytes());
        for op in &self.operations {
            out.push(op.kind.code());
            out.extend_from_slice(&op.key.to_le_bytes());
            out.extend_from_slice(&(op.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&Fnv64::new().write(&op.payload).finish().to_le_bytes());
        }
        out
    }

    pub fn decode_id(bytes: &[u8]) -> Option<u64> {
        Some(u64::from_le_bytes(bytes.get(..8)?.try_into().ok()?))
    }
}

pub fn generate_batch(mix: &OperationMix, b: usize, batch_id: u64, rng: &mut impl Rng) -> Batch {
    assert!(b >= 1, "batch size must be at least 1");
    let operations = (0..b)
        .map(|_| {
            let kind = mix.sample(rng);
            let key = rng.random_range(0..mix.keyspace.max(1));
            let fill = (key as u8) ^ kind.code();
            Operation {
                kind,
                key,
                payload: vec![fill; mix.payload_bytes],
            }
        })
        .collect();
    Batch {
        batch_id,
        operations,
    }
}

/// Sequentially numbered batches from one seeded stream.
#[derive(Debug, Clone)]
pub struct BatchStream {
    mix: OperationMix,
    b: usize,
    rng: ChaCha8Rng,
    next_id: u64,
}

impl BatchStream {
    pub fn new(mix: OperationMix, b: usize, rng: ChaCha8Rng) -> Self {
        BatchStream {
            mix,
            b,
            rng,
            next_id: 0,
        }
    }

    pub fn from_seed(mix: OperationMix, b: usize, seed: u64) -> Self {
        Self::new(mix, b, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn batch_size(&self) -> usize {
        self.b
    }

    pub fn next_batch(&mut self) -> Batch {
        let id = self.next_id;
        self.next_id += 1;
        generate_batch(&self.mix, self.b, id, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within_4_sigma(count: usize, n: usize, p: f64) -> bool {
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - mean).abs() <= 4.0 * sigma
    }

    #[test]
    fn half_read_half_update() {
        let mix = OperationMix::named("A").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = generate_batch(&mix, 10_000, 0, &mut rng);
        assert_eq!(batch.size(), 10_000);
        let reads = batch.counts()[&OpKind::Read];
        assert!(within_4_sigma(reads, 10_000, 0.5), "{reads}");
    }

    #[test]
    fn single_read() {
        let mix = OperationMix::new("r", &[(OpKind::Read, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = generate_batch(&mix, 1, 0, &mut rng);
        assert_eq!(batch.operations.len(), 1);
        assert_eq!(batch.operations[0].kind, OpKind::Read);
    }

    #[test]
    fn tpcc_composition() {
        let mix = OperationMix::named("tpcc").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = generate_batch(&mix, 2_000, 0, &mut rng);
        let counts = batch.counts();
        for (kind, p) in &mix.ratios {
            let c = counts.get(kind).copied().unwrap_or(0);
            assert!(within_4_sigma(c, 2_000, *p), "{kind}: {c}");
        }
    }

    #[test]
    fn seeded_streams_repeat() {
        let mix = OperationMix::named("B").unwrap();
        let mut a = BatchStream::from_seed(mix.clone(), 50, 9);
        let mut b = BatchStream::from_seed(mix, 50, 9);
        for _ in 0..3 {
            let (x, y) = (a.next_batch(), b.next_batch());
            assert_eq!(x, y);
            assert_eq!(x.encode(), y.encode());
        }
        assert_eq!(Batch::decode_id(&a.next_batch().encode()), Some(3));
    }

    #[test]
    fn rejects_bad_mixes() {
        assert!(matches!(
            OperationMix::new("x", &[(OpKind::Read, 0.5)]),
            Err(MixError::BadSum { .. })
        ));
        assert!(matches!(
            OperationMix::new("x", &[(OpKind::Read, 1.5), (OpKind::Update, -0.5)]),
            Err(MixError::BadRatio { .. })
        ));
        assert!(OperationMix::named("Z").is_err());
        let mut m = OperationMix::named("C").unwrap();
        m.payload_bytes = 0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn default_table_is_well_formed() {
        for name in ["A", "B", "C", "D", "E", "F", "tpcc"] {
            OperationMix::named(name).unwrap().validate().unwrap();
        }
        let e = OperationMix::named("e").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = generate_batch(&e, 1_000, 0, &mut rng).cost_factor();
        assert!(f > 3.5 && f < 4.0, "{f}");
    }
}
