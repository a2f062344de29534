use crate::consensus::NodeId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Append = 1,
    Reply = 2,
    Vote = 3,
    Heartbeat = 4,
    Election = 5,
    Workload = 6,
    Crash = 7,
}

/// Independent ChaCha streams keyed by (node, peer, purpose), all derived
/// from one seed. A stream's sequence does not depend on how often any
/// other stream is used.
#[derive(Debug, Clone)]
pub struct Streams {
    seed: u64,
    streams: HashMap<(NodeId, NodeId, Purpose), ChaCha8Rng>,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            seed,
            streams: HashMap::new(),
        }
    }

    pub fn get(&mut self, node: NodeId, peer: NodeId, purpose: Purpose) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams
            .entry((node, peer, purpose))
            .or_insert_with(|| Self::stream(seed, node, peer, purpose))
    }

    pub fn stream(seed: u64, node: NodeId, peer: NodeId, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((node as u64) << 40) | ((peer as u64) << 8) | purpose as u64);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_use_order() {
        let mut a = Streams::new(11);
        let mut b = Streams::new(11);
        let _: u64 = a.get(1, 2, Purpose::Heartbeat).random();
        let x: u64 = a.get(1, 2, Purpose::Append).random();
        let y: u64 = b.get(1, 2, Purpose::Append).random();
        assert_eq!(x, y);
        let z: u64 = b.get(2, 1, Purpose::Append).random();
        assert_ne!(x, z);
    }
}
