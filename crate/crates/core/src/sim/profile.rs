use crate::consensus::NodeId;
use crate::time::SimDuration;
use serde::{Deserialize, Serialize};

/// vCPU counts of the five zones, weakest first.
pub const ZONE_VCPUS: [u32; 5] = [1, 2, 4, 8, 16];
pub const REFERENCE_VCPU: u32 = 4;
pub const DEFAULT_BASE_SERVICE_MS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_id: u32,
    pub vcpu: u32,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityProfile {
    pub zones: Vec<Zone>,
    pub base_service_ms: f64,
    #[serde(default = "default_reference")]
    pub reference_vcpu: u32,
}

fn default_reference() -> u32 {
    REFERENCE_VCPU
}

impl HeterogeneityProfile {
    /// Every node in the 4-vCPU zone.
    pub fn homogeneous(n: usize, base_service_ms: f64) -> Self {
        HeterogeneityProfile {
            zones: vec![Zone {
                zone_id: 3,
                vcpu: REFERENCE_VCPU,
                nodes: (1..=n as NodeId).collect(),
            }],
            base_service_ms,
            reference_vcpu: REFERENCE_VCPU,
        }
    }

    /// Nodes spread evenly over the five zones; leftovers go to zones 5, 1,
    /// 3, 2, 4 in that order. Strongest zone first in id order.
    pub fn heterogeneous(n: usize, base_service_ms: f64) -> Self {
        let mut counts = [n / 5; 5];
        for &z in [4usize, 0, 2, 1, 3].iter().take(n % 5) {
            counts[z] += 1;
        }
        let mut next: NodeId = 1;
        let mut zones = Vec::new();
        for z in (0..5).rev() {
            let nodes: Vec<NodeId> = (next..next + counts[z] as NodeId).collect();
            next += counts[z] as NodeId;
            zones.push(Zone {
                zone_id: z as u32 + 1,
                vcpu: ZONE_VCPUS[z],
                nodes,
            });
        }
        HeterogeneityProfile {
            zones,
            base_service_ms,
            reference_vcpu: REFERENCE_VCPU,
        }
    }

    pub fn zone_of(&self, node: NodeId) -> Option<&Zone> {
        self.zones.iter().find(|z| z.nodes.contains(&node))
    }

    pub fn zone_counts(&self) -> Vec<(u32, usize)> {
        let mut v: Vec<(u32, usize)> = self.zones.iter().map(|z| (z.zone_id, z.nodes.len())).collect();
        v.sort();
        v
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        if !(self.base_service_ms > 0.0 && self.base_service_ms.is_finite()) {
            return Err("base_service_ms must be positive".into());
        }
        if self.reference_vcpu == 0 {
            return Err("reference_vcpu must be positive".into());
        }
        let mut seen = vec![false; n];
        for z in &self.zones {
            if z.vcpu == 0 {
                return Err(format!("zone {} has no vcpus", z.zone_id));
            }
            for &node in &z.nodes {
                let slot = (node as usize)
                    .checked_sub(1)
                    .and_then(|i| seen.get_mut(i))
                    .ok_or_else(|| format!("zone {} names unknown node {node}", z.zone_id))?;
                if *slot {
                    return Err(format!("node {node} is in two zones"));
                }
                *slot = true;
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(format!("node {} is in no zone", i + 1)),
            None => Ok(()),
        }
    }

    pub fn service_ms(&self, node: NodeId) -> f64 {
        let vcpu = self.zone_of(node).map_or(self.reference_vcpu, |z| z.vcpu);
        self.base_service_ms * self.reference_vcpu as f64 / vcpu as f64
    }

    pub fn service_time(&self, node: NodeId) -> SimDuration {
        SimDuration::from_ms(self.service_ms(node))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zone_table() {
        let expect: [(usize, [usize; 5]); 7] = [
            (3, [1, 0, 1, 0, 1]),
            (5, [1, 1, 1, 1, 1]),
            (7, [2, 1, 1, 1, 2]),
            (11, [2, 2, 2, 2, 3]),
            (20, [4, 4, 4, 4, 4]),
            (50, [10, 10, 10, 10, 10]),
            (100, [20, 20, 20, 20, 20]),
        ];
        for (n, counts) in expect {
            let p = HeterogeneityProfile::heterogeneous(n, 5.0);
            p.validate(n).unwrap();
            let got: Vec<usize> = p.zone_counts().iter().map(|c| c.1).collect();
            assert_eq!(got, counts.to_vec(), "n={n}");
        }
    }

    #[test]
    fn strongest_zone_gets_lowest_ids() {
        let p = HeterogeneityProfile::heterogeneous(7, 5.0);
        assert_eq!(p.zone_of(1).unwrap().vcpu, 16);
        assert_eq!(p.zone_of(7).unwrap().vcpu, 1);
        assert_eq!(p.service_ms(1), 1.25);
        assert_eq!(p.service_ms(7), 20.0);
    }

    #[test]
    fn homogeneous_and_validation() {
        let p = HeterogeneityProfile::homogeneous(4, 2.0);
        assert!((1..=4).all(|id| p.service_ms(id) == 2.0));
        assert!(p.validate(5).is_err());
        let mut bad = p.clone();
        bad.zones[0].nodes.push(2);
        assert!(bad.validate(4).is_err());
        let mut bad = p;
        bad.base_service_ms = 0.0;
        assert!(bad.validate(4).is_err());
    }
}
