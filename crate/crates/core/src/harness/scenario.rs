//! Scenario files: one JSON `ModalEvent` per line.
//!
//! Blank lines and lines starting with `#` are skipped. An optional first
//! record of the form `{"meta":{"name":..,"channels":[..]}}` names the
//! scenario and declares channels that must have recognizers even if no
//! event uses them.

use std::collections::BTreeSet;

use serde::Deserialize;

use super::HarnessError;
use crate::types::ModalEvent;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub name: String,
    pub channels: BTreeSet<String>,
    pub events: Vec<ModalEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    meta: Meta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    #[serde(default)]
    name: String,
    #[serde(default)]
    channels: BTreeSet<String>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut scenario = Scenario::default();
        let mut seen_record = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| HarnessError::ScenarioParse { line, message };
            if !seen_record {
                seen_record = true;
                if let Ok(meta) = serde_json::from_str::<MetaLine>(trimmed) {
                    scenario.name = meta.meta.name;
                    scenario.channels = meta.meta.channels;
                    continue;
                }
            }
            let event: ModalEvent = serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
            event.validate().map_err(|e| parse_err(e.to_string()))?;
            if event.session_id.is_empty() {
                return Err(parse_err("empty session_id".into()));
            }
            if let Some(prev) = scenario.events.last() {
                if event.interval.start() < prev.interval.start() {
                    return Err(parse_err(format!(
                        "t_start {} precedes previous t_start {}",
                        event.interval.start().millis(),
                        prev.interval.start().millis()
                    )));
                }
            }
            scenario.events.push(event);
        }
        Ok(scenario)
    }

    /// Declared channels plus every channel an event uses.
    pub fn required_channels(&self) -> BTreeSet<String> {
        let mut all = self.channels.clone();
        all.extend(self.events.iter().map(|e| e.channel.clone()));
        all
    }
}
