//! Deterministic discrete-event model of an SSD that performs embedding
//! gather-reduce (SparseLengthsSum) inside its flash translation layer, plus
//! the host stack, caches and workloads needed to compare it against
//! conventional block reads.

pub mod flashsim;
pub mod ftl;
pub mod host;
pub mod lru;
pub mod protocol;
pub mod rng;
pub mod sls;
pub mod table;
pub mod tracegen;
pub mod workloads;
