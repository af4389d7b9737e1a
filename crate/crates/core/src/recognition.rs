//! Table-driven recognizers.
//!
//! A lexicon maps payload patterns to symbols with fixed confidences and
//! n-best alternatives. The first matching entry in file order wins.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{nbest_order, Alternative, ModalEvent, ModalToken, Payload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecognitionError {
    #[error("events span channels {0:?}")]
    ChannelMismatch(BTreeSet<String>),
    #[error("lexicon entry {index}: {reason}")]
    InvalidEntry { index: usize, reason: String },
    #[error("lexicon document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconAlternative {
    pub symbol: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub channel: String,
    /// Every listed key must be present in the event payload with this value.
    #[serde(rename = "match", default)]
    pub pattern: Payload,
    pub symbol: String,
    pub confidence: f64,
    #[serde(default)]
    pub alternatives: Vec<LexiconAlternative>,
}

impl LexiconEntry {
    pub fn matches(&self, event: &ModalEvent) -> bool {
        self.channel == event.channel && self.pattern.iter().all(|(k, v)| event.payload.get(k) == Some(v))
    }

    fn validate(&self, index: usize) -> Result<(), RecognitionError> {
        let bad = |reason: String| Err(RecognitionError::InvalidEntry { index, reason });
        if self.channel.is_empty() {
            return bad("empty channel".into());
        }
        let in_range = |c: f64| (0.0..=1.0).contains(&c);
        if !in_range(self.confidence) {
            return bad(format!("confidence {} outside [0, 1]", self.confidence));
        }
        for alt in &self.alternatives {
            if !in_range(alt.confidence) {
                return bad(format!("alternative {} confidence {} outside [0, 1]", alt.symbol, alt.confidence));
            }
            // The head must stay first once the n-best list is sorted.
            if nbest_order(&alt.symbol, alt.confidence, &self.symbol, self.confidence) != Ordering::Greater {
                return bad(format!("alternative {} outranks the head symbol {}", alt.symbol, self.symbol));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
}

impl Lexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self, RecognitionError> {
        for (i, e) in entries.iter().enumerate() {
            e.validate(i)?;
        }
        Ok(Lexicon { entries })
    }

    /// Parses a JSON list of entries.
    pub fn from_json(text: &str) -> Result<Self, RecognitionError> {
        let entries: Vec<LexiconEntry> =
            serde_json::from_str(text).map_err(|e| RecognitionError::Parse(e.to_string()))?;
        Lexicon::new(entries)
    }

    pub fn channels(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.channel.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Recognition {
    pub tokens: Vec<ModalToken>,
    pub unrecognized: Vec<ModalEvent>,
}

/// Recognizes a batch of events from a single channel.
pub fn recognize(events: &[ModalEvent], lexicon: &Lexicon) -> Result<Recognition, RecognitionError> {
    let channels: BTreeSet<String> = events.iter().map(|e| e.channel.clone()).collect();
    if channels.len() > 1 {
        return Err(RecognitionError::ChannelMismatch(channels));
    }

    let mut out = Recognition::default();
    for event in events {
        let Some(entry) = lexicon.entries.iter().find(|e| e.matches(event)) else {
            out.unrecognized.push(event.clone());
            continue;
        };
        let mut alternatives = Vec::with_capacity(entry.alternatives.len() + 1);
        alternatives.push(Alternative {
            symbol: entry.symbol.clone(),
            payload: event.payload.clone(),
            confidence: entry.confidence,
        });
        alternatives.extend(entry.alternatives.iter().map(|a| Alternative {
            symbol: a.symbol.clone(),
            payload: event.payload.clone(),
            confidence: a.confidence,
        }));
        alternatives.sort_by(|a, b| nbest_order(&a.symbol, a.confidence, &b.symbol, b.confidence));
        out.tokens.push(ModalToken {
            channel: event.channel.clone(),
            symbol: entry.symbol.clone(),
            payload: event.payload.clone(),
            interval: event.interval,
            confidence: entry.confidence,
            alternatives,
        });
    }
    out.tokens.sort_by(|a, b| a.interval.start().cmp(&b.interval.start()).then_with(|| a.symbol.cmp(&b.symbol)));
    Ok(out)
}
