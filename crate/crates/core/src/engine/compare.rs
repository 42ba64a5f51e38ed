use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{run, run_spa_baseline, Metrics, SimConfig, SimError};
use crate::isa::Program;

/// Side-by-side metrics of the many-core run and the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub empa: Metrics,
    pub spa: Metrics,
    /// baseline / many-core per field; `null` when only the many-core value is zero.
    pub ratios: BTreeMap<String, Option<f64>>,
    /// baseline - many-core per field.
    pub deltas: BTreeMap<String, i64>,
    pub notes: Vec<String>,
}

fn fields(m: &Metrics) -> [(&'static str, u64); 9] {
    [
        ("makespan", m.makespan),
        ("energy", m.energy),
        ("messages", m.messages),
        ("hops", m.hops),
        ("memory_ops", m.memory_ops),
        ("call_memory_ops", m.call_memory_ops),
        ("qt_count", m.qt_count),
        ("spawn_cycles", m.spawn_cycles),
        ("guard_calls", m.guard_calls),
    ]
}

pub fn ratio(spa: u64, empa: u64) -> Option<f64> {
    match (spa, empa) {
        (0, 0) => Some(1.0),
        (_, 0) => None,
        (s, e) => Some(s as f64 / e as f64),
    }
}

impl ComparisonReport {
    pub fn new(empa: Metrics, spa: Metrics) -> ComparisonReport {
        let mut ratios = BTreeMap::new();
        let mut deltas = BTreeMap::new();
        for ((name, e), (_, s)) in fields(&empa).into_iter().zip(fields(&spa)) {
            ratios.insert(name.to_owned(), ratio(s, e));
            deltas.insert(name.to_owned(), s as i64 - e as i64);
        }
        let mut notes = vec!["scheduler events: 0 (guards and hires are served by the processor)".to_owned()];
        if empa.guard_calls > 0 {
            notes.push(format!("guard wait cycles: {} over {} guarded calls", empa.guard_wait_cycles, empa.guard_calls));
        }
        ComparisonReport { empa, spa, ratios, deltas, notes }
    }
}

/// Runs `program` both ways under the same configuration.
pub fn compare(program: &Program, config: &SimConfig) -> Result<ComparisonReport, SimError> {
    let empa = run(program, config)?.metrics;
    let spa = run_spa_baseline(program, config)?.metrics;
    Ok(ComparisonReport::new(empa, spa))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fields_compare_equal() {
        let r = ComparisonReport::new(Metrics::default(), Metrics::default());
        assert!(r.ratios.values().all(|v| *v == Some(1.0)));
        assert_eq!(ratio(5, 0), None);
        assert_eq!(ratio(6, 3), Some(2.0));
    }
}
