//! Brokerage service: least-loaded assignment of recognizer instances and
//! queue-depth autoscaling of the per-modality instance pools.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("pool {0} has no instances")]
    EmptyPool(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("instance {0} has no queued work to complete")]
    Underflow(String),
    #[error("no pool for modality {0}")]
    UnknownModality(String),
    #[error("invalid pool bounds: min {min}, max {max}")]
    InvalidPool { min: usize, max: usize },
    #[error("invalid scale policy: {0}")]
    InvalidPolicy(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub queue_depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePolicy {
    /// Scale up when average depth per instance stays above this.
    pub q_hi: u32,
    /// Scale down when average depth per instance drops below this.
    pub q_lo: u32,
    /// Consecutive over-threshold ticks needed before growing.
    pub window_w: u32,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy { q_hi: 4, q_lo: 1, window_w: 3 }
    }
}

impl ScalePolicy {
    pub fn validate(&self) -> Result<(), BrokerError> {
        if self.q_lo >= self.q_hi {
            return Err(BrokerError::InvalidPolicy("q_lo must be below q_hi"));
        }
        if self.window_w == 0 {
            return Err(BrokerError::InvalidPolicy("window_w must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScaleEvent {
    Grow,
    Shrink,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePool {
    pub modality: String,
    pub instances: Vec<Instance>,
    pub min_instances: usize,
    pub max_instances: usize,
    pub hi_streak: u32,
    next_serial: u64,
}

impl InstancePool {
    /// A pool holding `min` idle instances named `{modality}-1..`.
    pub fn new(modality: impl Into<String>, min: usize, max: usize) -> Result<Self, BrokerError> {
        if min == 0 || min > max {
            return Err(BrokerError::InvalidPool { min, max });
        }
        let mut pool = InstancePool {
            modality: modality.into(),
            instances: Vec::with_capacity(min),
            min_instances: min,
            max_instances: max,
            hi_streak: 0,
            next_serial: 1,
        };
        for _ in 0..min {
            pool.spawn();
        }
        Ok(pool)
    }

    fn spawn(&mut self) {
        let instance_id = format!("{}-{}", self.modality, self.next_serial);
        self.next_serial += 1;
        self.instances.push(Instance { instance_id, queue_depth: 0 });
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn total_depth(&self) -> u64 {
        self.instances.iter().map(|i| u64::from(i.queue_depth)).sum()
    }

    /// Picks the least-loaded instance (ties: lowest id) and queues one unit on it.
    pub fn assign(&mut self) -> Result<String, BrokerError> {
        let chosen = self
            .instances
            .iter_mut()
            .min_by(|a, b| a.queue_depth.cmp(&b.queue_depth).then_with(|| a.instance_id.cmp(&b.instance_id)))
            .ok_or_else(|| BrokerError::EmptyPool(self.modality.clone()))?;
        chosen.queue_depth += 1;
        Ok(chosen.instance_id.clone())
    }

    /// Marks one unit of work on `instance_id` as done.
    pub fn complete(&mut self, instance_id: &str) -> Result<(), BrokerError> {
        let inst = self
            .instances
            .iter_mut()
            .find(|i| i.instance_id == instance_id)
            .ok_or_else(|| BrokerError::UnknownInstance(instance_id.to_owned()))?;
        if inst.queue_depth == 0 {
            return Err(BrokerError::Underflow(instance_id.to_owned()));
        }
        inst.queue_depth -= 1;
        Ok(())
    }

    /// One autoscaling evaluation. Growth needs `window_w` consecutive
    /// over-threshold ticks; shrinking removes only an idle instance.
    pub fn autoscale_tick(&mut self, policy: &ScalePolicy) -> ScaleEvent {
        let n = self.instances.len() as u64;
        if n == 0 {
            return ScaleEvent::Hold;
        }
        let total = self.total_depth();
        // avg > q_hi and avg < q_lo evaluated exactly in integers.
        let over = total > u64::from(policy.q_hi) * n;
        let under = total < u64::from(policy.q_lo) * n;

        self.hi_streak = if over { self.hi_streak + 1 } else { 0 };

        if self.hi_streak >= policy.window_w && self.instances.len() < self.max_instances {
            self.spawn();
            self.hi_streak = 0;
            return ScaleEvent::Grow;
        }
        if under && self.instances.len() > self.min_instances {
            let idle = self
                .instances
                .iter()
                .enumerate()
                .filter(|(_, i)| i.queue_depth == 0)
                .max_by(|(_, a), (_, b)| a.instance_id.cmp(&b.instance_id))
                .map(|(idx, _)| idx);
            if let Some(idx) = idle {
                self.instances.remove(idx);
                return ScaleEvent::Shrink;
            }
        }
        ScaleEvent::Hold
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub tick: u64,
    pub modality: String,
    pub event: ScaleEvent,
    /// Pool size after the event.
    pub instances: usize,
}

/// All recognizer pools plus the scaling timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Broker {
    policy: ScalePolicy,
    pools: BTreeMap<String, InstancePool>,
    timeline: Vec<ScalingRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerSnapshot {
    pub pools: Vec<InstancePool>,
    pub timeline: Vec<ScalingRecord>,
}

impl Broker {
    pub fn new(policy: ScalePolicy) -> Result<Self, BrokerError> {
        policy.validate()?;
        Ok(Broker { policy, pools: BTreeMap::new(), timeline: Vec::new() })
    }

    pub fn policy(&self) -> &ScalePolicy {
        &self.policy
    }

    pub fn add_pool(&mut self, pool: InstancePool) {
        self.pools.insert(pool.modality.clone(), pool);
    }

    pub fn pool(&self, modality: &str) -> Option<&InstancePool> {
        self.pools.get(modality)
    }

    fn pool_mut(&mut self, modality: &str) -> Result<&mut InstancePool, BrokerError> {
        self.pools.get_mut(modality).ok_or_else(|| BrokerError::UnknownModality(modality.to_owned()))
    }

    pub fn assign(&mut self, modality: &str) -> Result<String, BrokerError> {
        self.pool_mut(modality)?.assign()
    }

    pub fn complete(&mut self, modality: &str, instance_id: &str) -> Result<(), BrokerError> {
        self.pool_mut(modality)?.complete(instance_id)
    }

    /// Runs one autoscaling evaluation on every pool, in modality order.
    pub fn tick(&mut self, tick: u64) -> Vec<ScalingRecord> {
        let policy = self.policy;
        let records: Vec<ScalingRecord> = self
            .pools
            .values_mut()
            .map(|pool| {
                let event = pool.autoscale_tick(&policy);
                ScalingRecord { tick, modality: pool.modality.clone(), event, instances: pool.len() }
            })
            .collect();
        self.timeline.extend(records.iter().cloned());
        records
    }

    pub fn timeline(&self) -> &[ScalingRecord] {
        &self.timeline
    }

    pub fn snapshot(&self) -> BrokerSnapshot {
        BrokerSnapshot { pools: self.pools.values().cloned().collect(), timeline: self.timeline.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_with(depths: &[(&str, u32)]) -> InstancePool {
        let mut p = InstancePool::new("speech", 1, 8).unwrap();
        p.instances = depths.iter().map(|(id, d)| Instance { instance_id: id.to_string(), queue_depth: *d }).collect();
        p
    }

    #[test]
    fn singleton_pool_assigns_its_instance() {
        let mut p = InstancePool::new("speech", 1, 4).unwrap();
        assert_eq!(p.assign().unwrap(), "speech-1");
        assert_eq!(p.instances[0].queue_depth, 1);
    }

    #[test]
    fn least_loaded_wins() {
        let mut p = pool_with(&[("r-a", 2), ("r-b", 1)]);
        assert_eq!(p.assign().unwrap(), "r-b");
        assert_eq!(p.instances[1].queue_depth, 2);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let mut p = pool_with(&[("r-b", 1), ("r-a", 1)]);
        assert_eq!(p.assign().unwrap(), "r-a");
    }

    #[test]
    fn empty_pool_cannot_assign() {
        let mut p = pool_with(&[]);
        assert_eq!(p.assign(), Err(BrokerError::EmptyPool("speech".into())));
    }

    #[test]
    fn complete_paths() {
        let mut p = pool_with(&[("r-a", 1)]);
        p.complete("r-a").unwrap();
        assert_eq!(p.instances[0].queue_depth, 0);
        assert_eq!(p.complete("r-a"), Err(BrokerError::Underflow("r-a".into())));
        assert_eq!(p.complete("r-z"), Err(BrokerError::UnknownInstance("r-z".into())));
    }

    #[test]
    fn sustained_overload_grows_on_third_tick() {
        let policy = ScalePolicy::default();
        let mut p = InstancePool::new("speech", 1, 4).unwrap();
        p.instances[0].queue_depth = 5;
        assert_eq!(p.autoscale_tick(&policy), ScaleEvent::Hold);
        assert_eq!(p.hi_streak, 1);
        assert_eq!(p.autoscale_tick(&policy), ScaleEvent::Hold);
        assert_eq!(p.autoscale_tick(&policy), ScaleEvent::Grow);
        assert_eq!(p.len(), 2);
        assert_eq!(p.hi_streak, 0);
        assert_eq!(p.instances[1].instance_id, "speech-2");
    }

    #[test]
    fn floor_holds_forever() {
        let policy = ScalePolicy::default();
        let mut p = InstancePool::new("speech", 1, 4).unwrap();
        for _ in 0..20 {
            assert_eq!(p.autoscale_tick(&policy), ScaleEvent::Hold);
        }
    }

    #[test]
    fn ceiling_holds_under_overload() {
        let policy = ScalePolicy::default();
        let mut p = InstancePool::new("speech", 2, 2).unwrap();
        for inst in &mut p.instances {
            inst.queue_depth = 50;
        }
        for _ in 0..10 {
            assert_eq!(p.autoscale_tick(&policy), ScaleEvent::Hold);
            assert_eq!(p.len(), 2);
        }
    }

    #[test]
    fn shrink_removes_highest_idle_instance() {
        let policy = ScalePolicy::default();
        let mut p = pool_with(&[("r-a", 0), ("r-b", 1), ("r-c", 0)]);
        assert_eq!(p.autoscale_tick(&policy), ScaleEvent::Shrink);
        let ids: Vec<_> = p.instances.iter().map(|i| i.instance_id.as_str()).collect();
        assert_eq!(ids, ["r-a", "r-b"]);
    }

    #[test]
    fn shrink_never_preempts_busy_instances() {
        let policy = ScalePolicy { q_hi: 10, q_lo: 5, window_w: 1 };
        let mut p = pool_with(&[("r-a", 1), ("r-b", 1)]);
        assert_eq!(p.autoscale_tick(&policy), ScaleEvent::Hold);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn policy_validation() {
        assert!(ScalePolicy { q_hi: 1, q_lo: 1, window_w: 1 }.validate().is_err());
        assert!(ScalePolicy { q_hi: 2, q_lo: 1, window_w: 0 }.validate().is_err());
        assert!(InstancePool::new("x", 0, 3).is_err());
        assert!(InstancePool::new("x", 4, 3).is_err());
    }
}
