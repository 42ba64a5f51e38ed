use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::isa::{Word, NUM_REGS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreMetrics {
    pub core: u32,
    pub active_cycles: u64,
    pub instructions: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub makespan: u64,
    /// Sum of active cycles over all cores.
    pub energy: u64,
    pub messages: u64,
    pub hops: u64,
    /// Every main-memory access, data and call traffic alike.
    pub memory_ops: u64,
    /// Accesses made to save or restore call state.
    pub call_memory_ops: u64,
    /// QTs hired through QCREATE.
    pub qt_count: u64,
    pub max_live_qts: u64,
    pub pool_exhaustions: u64,
    pub guard_calls: u64,
    pub guard_wait_cycles: u64,
    pub last_qt_start: u64,
    /// Cycles during which at least one QT creation was in progress.
    pub spawn_cycles: u64,
    pub nacks: u64,
    /// Cores that executed anything, by id.
    pub per_core: Vec<CoreMetrics>,
}

/// Architectural state visible after a run: root registers and memory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub registers: [Word; NUM_REGS],
    pub memory: BTreeMap<u64, Word>,
}

/// Length of the union of half-open intervals `[start, end)`.
pub fn union_length(intervals: &[(u64, u64)]) -> u64 {
    let mut v: Vec<(u64, u64)> = intervals.iter().copied().filter(|(s, e)| e > s).collect();
    v.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in v {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    total + cur.map_or(0, |(s, e)| e - s)
}
