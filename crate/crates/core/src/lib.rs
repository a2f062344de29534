//! Weighted-quorum replication in a deterministic simulator.

pub mod consensus;
pub mod digest;
pub mod harness;
pub mod sim;
pub mod time;
pub mod trace;
pub mod verifier;
pub mod weight_scheme;
pub mod workload;
