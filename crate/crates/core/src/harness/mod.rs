//! Deterministic scenario replay, broker load generation and run reports.

mod driver;
mod load;
mod node;
mod report;
mod scenario;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::ScalePolicy;
use crate::fission::FissionConfig;
use crate::fusion::FusionConfig;
use crate::gateway::{GatewayConfig, GatewayError};
use crate::mesh::{ClientError, MeshConfig};

pub use driver::{boot_mesh, run_scenario, Driver, Inputs};
pub use load::{run_load, LoadConfig};
pub use node::{GatewayNode, OP_CLOCK, OP_INGEST, OP_REPORT};
pub use report::{RunReport, Totals};
pub use scenario::Scenario;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("SCENARIO_PARSE at line {line}: {message}")]
    ScenarioParse { line: usize, message: String },
    #[error("CONFIG_INVALID: {0}")]
    ConfigInvalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("event at {at} ms arrives after virtual time {now} ms")]
    Late { at: u64, now: u64 },
    #[error("service call failed: {0}")]
    Service(#[from] ClientError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub gateway: GatewayConfig,
    pub fusion: FusionConfig,
    pub fission: FissionConfig,
    pub policy: ScalePolicy,
    pub pool_min: usize,
    pub pool_max: usize,
    pub lease_ttl_ms: u64,
    pub tick_ms: u64,
    pub transport: TransportKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gateway: GatewayConfig::default(),
            fusion: FusionConfig::default(),
            fission: FissionConfig::default(),
            policy: ScalePolicy::default(),
            pool_min: 1,
            pool_max: 8,
            lease_ttl_ms: 30_000,
            tick_ms: 100,
            transport: TransportKind::Inproc,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |e: &dyn std::fmt::Display| HarnessError::ConfigInvalid(e.to_string());
        self.gateway.validate().map_err(|e| bad(&e))?;
        self.fission.validate().map_err(|e| bad(&e))?;
        self.policy.validate().map_err(|e| bad(&e))?;
        if self.pool_min == 0 || self.pool_min > self.pool_max {
            return Err(HarnessError::ConfigInvalid(format!(
                "pool bounds [{}, {}] must satisfy 1 <= min <= max",
                self.pool_min, self.pool_max
            )));
        }
        if self.lease_ttl_ms < 2 * self.tick_ms {
            return Err(HarnessError::ConfigInvalid("lease_ttl_ms must be at least two ticks".into()));
        }
        if self.tick_ms == 0 {
            return Err(HarnessError::ConfigInvalid("tick_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn mesh(&self) -> MeshConfig {
        MeshConfig {
            fusion: self.fusion,
            fission: self.fission,
            policy: self.policy,
            pool_min: self.pool_min,
            pool_max: self.pool_max,
        }
    }
}
