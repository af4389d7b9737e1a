//! Service registry with leases and the gateway-rooted hierarchy.
//!
//! Expiry is lazy: every query filters on `lease_expiry > now`. [`Registry::sweep`]
//! drops expired entries eagerly and does not change any query result.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{InvariantError, Layer, ServiceDescriptor, ServiceKind, Timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("endpoint {endpoint} is already held by live service {holder}")]
    DuplicateEndpoint { endpoint: String, holder: String },
    #[error("lease ttl must be positive")]
    InvalidTtl,
    #[error("parent {parent} of {service_id} is not a live gateway")]
    UnknownParent { service_id: String, parent: String },
    #[error(transparent)]
    InvalidDescriptor(#[from] InvariantError),
}

/// Filter for [`Registry::find`]; unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ServiceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<Layer>,
}

impl RegistryQuery {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn kind(kind: ServiceKind) -> Self {
        RegistryQuery { kind: Some(kind), ..Self::default() }
    }

    pub fn modality(modality: impl Into<String>) -> Self {
        RegistryQuery { modality: Some(modality.into()), ..Self::default() }
    }

    pub fn matches(&self, d: &ServiceDescriptor) -> bool {
        self.kind.is_none_or(|k| k == d.kind)
            && self.modality.as_ref().is_none_or(|m| d.modality.as_ref() == Some(m))
            && self.layer.is_none_or(|l| l == d.layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegistryAction {
    Publish,
    Renew,
    Deregister,
    Expire,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEvent {
    pub at: Timestamp,
    pub action: RegistryAction,
    pub service_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: BTreeMap<String, ServiceDescriptor>,
    log: Vec<RegistryEvent>,
}

fn live(d: &ServiceDescriptor, now: Timestamp) -> bool {
    d.lease_expiry > now
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `d` with a lease of `ttl` ms from `now`. Re-publishing an id
    /// replaces the entry and renews its lease.
    pub fn publish(&mut self, mut d: ServiceDescriptor, ttl: u64, now: Timestamp) -> Result<String, RegistryError> {
        if ttl == 0 {
            return Err(RegistryError::InvalidTtl);
        }
        d.validate()?;
        if let Some(parent) = &d.parent_id {
            let parent_ok = self.entries.get(parent).is_some_and(|p| p.kind == ServiceKind::Gateway && live(p, now));
            if !parent_ok {
                return Err(RegistryError::UnknownParent { service_id: d.service_id.clone(), parent: parent.clone() });
            }
        }
        if let Some(holder) =
            self.entries.values().find(|o| o.endpoint == d.endpoint && o.service_id != d.service_id && live(o, now))
        {
            return Err(RegistryError::DuplicateEndpoint {
                endpoint: d.endpoint.clone(),
                holder: holder.service_id.clone(),
            });
        }

        d.lease_expiry = now.plus(ttl);
        let action = match self.entries.get(&d.service_id) {
            Some(old) if live(old, now) => RegistryAction::Renew,
            _ => RegistryAction::Publish,
        };
        let id = d.service_id.clone();
        self.log.push(RegistryEvent { at: now, action, service_id: id.clone() });
        self.entries.insert(id.clone(), d);
        Ok(id)
    }

    /// Live descriptors matching `q`, sorted by service id.
    pub fn find(&self, q: &RegistryQuery, now: Timestamp) -> Vec<ServiceDescriptor> {
        self.entries.values().filter(|d| live(d, now) && q.matches(d)).cloned().collect()
    }

    /// Live descriptors whose parent is `parent`, sorted by service id.
    pub fn children(&self, parent: &str, now: Timestamp) -> Vec<ServiceDescriptor> {
        self.entries.values().filter(|d| live(d, now) && d.parent_id.as_deref() == Some(parent)).cloned().collect()
    }

    pub fn get(&self, service_id: &str, now: Timestamp) -> Option<&ServiceDescriptor> {
        self.entries.get(service_id).filter(|d| live(d, now))
    }

    /// Removes `service_id`. Returns whether a live entry was removed.
    pub fn deregister(&mut self, service_id: &str, now: Timestamp) -> bool {
        match self.entries.remove(service_id) {
            Some(d) if live(&d, now) => {
                self.log.push(RegistryEvent {
                    at: now,
                    action: RegistryAction::Deregister,
                    service_id: service_id.into(),
                });
                true
            }
            _ => false,
        }
    }

    /// Drops every expired entry, returning how many were removed.
    pub fn sweep(&mut self, now: Timestamp) -> usize {
        let expired: Vec<String> =
            self.entries.values().filter(|d| !live(d, now)).map(|d| d.service_id.clone()).collect();
        for id in &expired {
            self.entries.remove(id);
            self.log.push(RegistryEvent { at: now, action: RegistryAction::Expire, service_id: id.clone() });
        }
        expired.len()
    }

    pub fn log(&self) -> &[RegistryEvent] {
        &self.log
    }
}
