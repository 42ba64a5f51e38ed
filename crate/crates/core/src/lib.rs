//! Loosely-timed simulator of a clustered many-core processor that runs
//! quasi-threads (QTs) on a hexagonal lattice of cores.

pub mod cli;
pub mod core_unit;
pub mod engine;
pub mod isa;
pub mod messaging;
pub mod processor;
pub mod topology;
pub mod workloads;
