use serde::{Deserialize, Serialize};

use crate::broker::{Broker, BrokerError, InstancePool, ScalePolicy, ScalingRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    pub modality: String,
    pub policy: ScalePolicy,
    pub pool_min: usize,
    pub pool_max: usize,
    /// Requests each instance finishes per tick.
    pub service_per_tick: u32,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig {
            modality: "speech".into(),
            policy: ScalePolicy::default(),
            pool_min: 1,
            pool_max: 8,
            service_per_tick: 1,
        }
    }
}

/// Drives one recognizer pool with `schedule[t]` synthetic requests at
/// tick `t`. Each tick assigns the arrivals, runs the autoscaler, then lets
/// every instance finish up to `service_per_tick` queued requests.
pub fn run_load(schedule: &[u32], cfg: &LoadConfig) -> Result<Vec<ScalingRecord>, BrokerError> {
    let mut broker = Broker::new(cfg.policy)?;
    broker.add_pool(InstancePool::new(cfg.modality.clone(), cfg.pool_min, cfg.pool_max)?);
    for (tick, &arrivals) in schedule.iter().enumerate() {
        for _ in 0..arrivals {
            broker.assign(&cfg.modality)?;
        }
        broker.tick(tick as u64);
        let busy: Vec<(String, u32)> = broker
            .pool(&cfg.modality)
            .map(|p| p.instances.iter().map(|i| (i.instance_id.clone(), i.queue_depth)).collect())
            .unwrap_or_default();
        for (id, depth) in busy {
            for _ in 0..depth.min(cfg.service_per_tick) {
                broker.complete(&cfg.modality, &id)?;
            }
        }
    }
    Ok(broker.timeline().to_vec())
}
