//! The run report: every turn, the scaling timeline and the registry log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::broker::ScalingRecord;
use crate::codec::to_canonical_vec;
use crate::gateway::TurnReport;
use crate::registry::RegistryEvent;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub turns: usize,
    pub failures: usize,
    pub max_instances: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub turns: Vec<TurnReport>,
    pub scaling_timeline: Vec<ScalingRecord>,
    pub registry_log: Vec<RegistryEvent>,
    pub totals: Totals,
}

impl RunReport {
    /// Totals derived from the turns and the scaling timeline.
    pub fn compute_totals(&self) -> Totals {
        let mut max_instances = BTreeMap::new();
        for r in &self.scaling_timeline {
            let m = max_instances.entry(r.modality.clone()).or_insert(0);
            *m = (*m).max(r.instances);
        }
        Totals { turns: self.turns.len(), failures: self.turns.iter().filter(|t| !t.is_done()).count(), max_instances }
    }

    pub fn has_failures(&self) -> bool {
        self.totals.failures > 0
    }

    /// Canonical JSON bytes: sorted keys, no whitespace.
    pub fn to_canonical(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("report fields are always representable")
    }
}
