use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::topology::{Clustering, CoreId, GridConfig};

/// Simulation parameters. Serialized as a flat JSON object; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    #[serde(serialize_with = "grid_to_str", deserialize_with = "grid_from_str")]
    pub grid: GridConfig,
    pub cycle_per_instr: u64,
    pub hop_cost: u64,
    pub memory_latency: u64,
    pub meta_dispatch_cost: u64,
    /// Words of global memory.
    pub memory_size: u64,
    /// Top words of memory reserved for the baseline call stack.
    pub stack_words: u64,
    pub cycle_cap: u64,
    pub seed: u64,
    pub denied_cores: Vec<u32>,
    pub trace_cores: bool,
    pub trace_regs: bool,
    pub trace_messages: bool,
    /// Diagnostic: QtResult messages are held back instead of written to latches.
    pub withhold_results: bool,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            grid: GridConfig { width: 8, height: 8 },
            cycle_per_instr: 1,
            hop_cost: 3,
            memory_latency: 100,
            meta_dispatch_cost: 5,
            memory_size: 65536,
            stack_words: 4096,
            cycle_cap: 50_000_000,
            seed: 0,
            denied_cores: Vec::new(),
            trace_cores: false,
            trace_regs: false,
            trace_messages: false,
            withhold_results: false,
        }
    }
}

fn grid_to_str<S: Serializer>(g: &GridConfig, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(g)
}

fn grid_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<GridConfig, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("cycle_per_instr", self.cycle_per_instr),
            ("hop_cost", self.hop_cost),
            ("memory_latency", self.memory_latency),
            ("meta_dispatch_cost", self.meta_dispatch_cost),
            ("memory_size", self.memory_size),
            ("cycle_cap", self.cycle_cap),
        ] {
            if v == 0 {
                return Err(ConfigError(format!("{name} must be at least 1")));
            }
        }
        if self.grid.width == 0 || self.grid.height == 0 {
            return Err(ConfigError("grid must be at least 1x1".into()));
        }
        if self.stack_words > self.memory_size {
            return Err(ConfigError("stack_words exceeds memory_size".into()));
        }
        let n = self.grid.core_count() as u32;
        if let Some(bad) = self.denied_cores.iter().find(|&&c| c >= n) {
            return Err(ConfigError(format!("denied core {bad} is outside the {} grid", self.grid)));
        }
        Ok(())
    }

    pub fn denied_set(&self) -> BTreeSet<CoreId> {
        self.denied_cores.iter().map(|&c| CoreId(c)).collect()
    }

    pub fn from_json(text: &str) -> Result<SimConfig, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Seeded choice of `fraction` of the non-head cores.
pub fn random_denied(clustering: &Clustering, fraction: f64, seed: u64) -> BTreeSet<CoreId> {
    let mut members: Vec<CoreId> = clustering.grid().cores().filter(|&c| !clustering.is_head(c)).collect();
    let k = ((members.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    members.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    members.truncate(k);
    members.into_iter().collect()
}

/// Every physical cluster head.
pub fn all_heads(clustering: &Clustering) -> BTreeSet<CoreId> {
    clustering.heads().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_clusters;

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = SimConfig { grid: GridConfig { width: 4, height: 3 }, hop_cost: 2, ..SimConfig::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"grid\":\"4x3\""));
        assert_eq!(SimConfig::from_json(&text).unwrap(), cfg);
        assert!(SimConfig::from_json("{\"hop_costs\": 3}").is_err());
        assert_eq!(SimConfig::from_json("{\"hop_cost\": 7}").unwrap().hop_cost, 7);
    }

    #[test]
    fn zero_costs_rejected() {
        assert!(SimConfig { hop_cost: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { denied_cores: vec![64], ..SimConfig::default() }.validate().is_err());
    }

    #[test]
    fn random_denied_is_seeded_and_headless() {
        let cl = build_clusters(GridConfig::new(8, 8).unwrap());
        let a = random_denied(&cl, 0.2, 7);
        assert_eq!(a, random_denied(&cl, 0.2, 7));
        assert!(a.iter().all(|&c| !cl.is_head(c)));
        let members = cl.grid().cores().filter(|&c| !cl.is_head(c)).count();
        assert_eq!(a.len(), ((members as f64) * 0.2).round() as usize);
    }
}
