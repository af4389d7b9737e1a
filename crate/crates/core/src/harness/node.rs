//! The network-facing gateway for serve mode.
//!
//! `ingest`, `report` and `clock` are answered by the gateway itself; every other
//! operation is passed through to the mesh it fronts, so one port serves
//! both user input and registry inspection.

use std::sync::{Arc, Mutex};

use super::{Driver, HarnessError, Inputs, RunConfig};
use crate::codec::Envelope;
use crate::mesh::{SharedMesh, FAULT_BAD_REQUEST, FAULT_OPERATION};
use crate::transport::{Handler, InProc};
use crate::types::ModalEvent;

pub const OP_INGEST: &str = "ingest";
pub const OP_REPORT: &str = "report";
pub const OP_CLOCK: &str = "clock";

pub struct GatewayNode {
    mesh: Arc<SharedMesh>,
    driver: Mutex<Driver<InProc<SharedMesh>>>,
    name: String,
    seed: u64,
}

impl GatewayNode {
    pub fn boot(
        mesh: Arc<SharedMesh>,
        inputs: &Inputs,
        cfg: RunConfig,
        channels: &[String],
        name: impl Into<String>,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        let driver = Driver::boot(InProc::new(Arc::clone(&mesh)), cfg, &inputs.lexicon, channels, &inputs.profile)?;
        Ok(GatewayNode { mesh, driver: Mutex::new(driver), name: name.into(), seed })
    }

    fn gateway_op(&self, req: &Envelope) -> Result<Envelope, String> {
        let mut driver = self.driver.lock().unwrap_or_else(|p| p.into_inner());
        let mut out = req.reply(format!("re:{}", req.header.message_id), format!("{}.ok", req.header.operation));
        if req.header.operation == OP_INGEST {
            let event: ModalEvent = req.get("event").map_err(|e| e.to_string())?;
            let turns = driver.ingest(event).map_err(|e| e.to_string())?;
            out.put("turns", &turns).map_err(|e| e.to_string())?;
        } else if req.header.operation == OP_CLOCK {
            out.put("now", &driver.now()).map_err(|e| e.to_string())?;
        } else {
            if req.get_opt::<bool>("drain").map_err(|e| e.to_string())?.unwrap_or(false) {
                driver.drain().map_err(|e| e.to_string())?;
            }
            let report = driver.report(&self.name, self.seed).map_err(|e| e.to_string())?;
            out.put("report", &report).map_err(|e| e.to_string())?;
        }
        Ok(out)
    }
}

impl Handler for GatewayNode {
    fn handle(&self, req: &Envelope) -> Envelope {
        match req.header.operation.as_str() {
            OP_INGEST | OP_REPORT | OP_CLOCK => self.gateway_op(req).unwrap_or_else(|message| {
                let mut f = req.reply(format!("re:{}", req.header.message_id), FAULT_OPERATION);
                f.body.insert("code".into(), FAULT_BAD_REQUEST.into());
                f.body.insert("message".into(), message.into());
                f
            }),
            _ => self.mesh.handle(req),
        }
    }
}
