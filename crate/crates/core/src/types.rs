//! Domain types shared by every service in the mesh.
//!
//! All of these are plain values: cheap to clone, `Send + Sync`, and
//! serialized with `serde` so the same structures travel inside envelopes
//! and end up in run reports.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Payload of an event or token: sorted key/value strings.
pub type Payload = BTreeMap<String, String>;

/// Integer milliseconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn plus(self, dt: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(dt))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Violations of the domain invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantError {
    #[error("interval start {start} is after end {end}")]
    InvertedInterval { start: u64, end: u64 },
    #[error("channel identifier is empty")]
    EmptyChannel,
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("token alternatives are not sorted by confidence")]
    UnsortedAlternatives,
    #[error("token head does not match its first alternative")]
    HeadMismatch,
    #[error("terminal holds no tokens")]
    EmptyTerminal,
    #[error("terminal holds two tokens on channel {0}")]
    DuplicateChannel(String),
    #[error("terminal anchor does not equal the earliest token start")]
    BadAnchor,
    #[error("terminal anchors decrease along the sentence")]
    UnorderedTerminals,
    #[error("descriptor {0}: {1}")]
    Descriptor(String, &'static str),
}

/// Closed time span `[start, end]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(Timestamp, Timestamp)", into = "(Timestamp, Timestamp)")]
pub struct Interval {
    start: Timestamp,
    end: Timestamp,
}

impl Interval {
    pub fn new(start: u64, end: u64) -> Result<Self, InvariantError> {
        if start > end {
            return Err(InvariantError::InvertedInterval { start, end });
        }
        Ok(Interval { start: Timestamp(start), end: Timestamp(end) })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }
}

impl TryFrom<(Timestamp, Timestamp)> for Interval {
    type Error = InvariantError;

    fn try_from((start, end): (Timestamp, Timestamp)) -> Result<Self, Self::Error> {
        Interval::new(start.0, end.0)
    }
}

impl From<Interval> for (Timestamp, Timestamp) {
    fn from(i: Interval) -> Self {
        (i.start, i.end)
    }
}

/// Raw per-channel input as captured by a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalEvent {
    pub session_id: String,
    pub channel: String,
    #[serde(default)]
    pub payload: Payload,
    pub interval: Interval,
    #[serde(default)]
    pub device_id: String,
    #[serde(default)]
    pub end_turn: bool,
}

impl ModalEvent {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.channel.is_empty() {
            return Err(InvariantError::EmptyChannel);
        }
        Ok(())
    }
}

/// One n-best hypothesis of a recognizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub symbol: String,
    #[serde(default)]
    pub payload: Payload,
    pub confidence: f64,
}

/// Ordering used for n-best lists: confidence descending, then symbol ascending.
pub fn nbest_order(a_symbol: &str, a_conf: f64, b_symbol: &str, b_conf: f64) -> Ordering {
    b_conf.total_cmp(&a_conf).then_with(|| a_symbol.cmp(b_symbol))
}

fn check_confidence(c: f64) -> Result<(), InvariantError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(InvariantError::ConfidenceOutOfRange(c))
    }
}

/// A recognized, confidence-scored symbol together with its n-best list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalToken {
    pub channel: String,
    pub symbol: String,
    #[serde(default)]
    pub payload: Payload,
    pub interval: Interval,
    pub confidence: f64,
    pub alternatives: Vec<Alternative>,
}

impl ModalToken {
    /// Builds a token whose head is the best of `alternatives`.
    pub fn from_alternatives(
        channel: impl Into<String>,
        interval: Interval,
        mut alternatives: Vec<Alternative>,
    ) -> Result<Self, InvariantError> {
        let channel = channel.into();
        if channel.is_empty() {
            return Err(InvariantError::EmptyChannel);
        }
        for alt in &alternatives {
            check_confidence(alt.confidence)?;
        }
        alternatives.sort_by(|a, b| nbest_order(&a.symbol, a.confidence, &b.symbol, b.confidence));
        let head = alternatives.first().ok_or(InvariantError::HeadMismatch)?.clone();
        Ok(ModalToken {
            channel,
            symbol: head.symbol,
            payload: head.payload,
            interval,
            confidence: head.confidence,
            alternatives,
        })
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.channel.is_empty() {
            return Err(InvariantError::EmptyChannel);
        }
        check_confidence(self.confidence)?;
        for alt in &self.alternatives {
            check_confidence(alt.confidence)?;
        }
        let sorted = self
            .alternatives
            .windows(2)
            .all(|w| nbest_order(&w[0].symbol, w[0].confidence, &w[1].symbol, w[1].confidence) != Ordering::Greater);
        if !sorted {
            return Err(InvariantError::UnsortedAlternatives);
        }
        match self.alternatives.first() {
            Some(head) if head.symbol == self.symbol && head.confidence == self.confidence => Ok(()),
            _ => Err(InvariantError::HeadMismatch),
        }
    }

    /// Multiplies every confidence (head and alternatives) by `c`.
    pub fn scaled(&self, c: f64) -> ModalToken {
        let mut t = self.clone();
        t.confidence *= c;
        for alt in &mut t.alternatives {
            alt.confidence *= c;
        }
        t
    }

    /// Total order used wherever tokens must be sorted deterministically:
    /// start time, channel, end time, symbol, payload, confidence.
    pub fn canonical_cmp(&self, other: &ModalToken) -> Ordering {
        self.interval
            .start()
            .cmp(&other.interval.start())
            .then_with(|| self.channel.cmp(&other.channel))
            .then_with(|| self.interval.end().cmp(&other.interval.end()))
            .then_with(|| self.symbol.cmp(&other.symbol))
            .then_with(|| self.payload.cmp(&other.payload))
            .then_with(|| self.confidence.total_cmp(&other.confidence))
    }
}

/// Co-temporal tokens from distinct channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalTerminal {
    /// Sorted by channel; at most one token per channel.
    pub tokens: Vec<ModalToken>,
    pub anchor: Timestamp,
}

impl MultimodalTerminal {
    pub fn new(mut tokens: Vec<ModalToken>) -> Result<Self, InvariantError> {
        tokens.sort_by(|a, b| a.channel.cmp(&b.channel));
        let anchor = tokens.iter().map(|t| t.interval.start()).min().ok_or(InvariantError::EmptyTerminal)?;
        let terminal = MultimodalTerminal { tokens, anchor };
        terminal.validate()?;
        Ok(terminal)
    }

    pub fn token_on(&self, channel: &str) -> Option<&ModalToken> {
        self.tokens.iter().find(|t| t.channel == channel)
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        let first = self.tokens.first().ok_or(InvariantError::EmptyTerminal)?;
        let mut seen = BTreeSet::new();
        let mut anchor = first.interval.start();
        for token in &self.tokens {
            if !seen.insert(token.channel.as_str()) {
                return Err(InvariantError::DuplicateChannel(token.channel.clone()));
            }
            anchor = anchor.min(token.interval.start());
        }
        if anchor != self.anchor {
            return Err(InvariantError::BadAnchor);
        }
        Ok(())
    }
}

/// Fusion output: terminals in non-decreasing anchor order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultimodalSentence {
    pub terminals: Vec<MultimodalTerminal>,
}

impl MultimodalSentence {
    pub fn validate(&self) -> Result<(), InvariantError> {
        for t in &self.terminals {
            t.validate()?;
        }
        if self.terminals.windows(2).any(|w| w[0].anchor > w[1].anchor) {
            return Err(InvariantError::UnorderedTerminals);
        }
        Ok(())
    }

    /// Tokens in sentence order: terminal by terminal, channel order within.
    pub fn tokens(&self) -> impl Iterator<Item = &ModalToken> {
        self.terminals.iter().flat_map(|t| t.tokens.iter())
    }

    pub fn token_count(&self) -> usize {
        self.terminals.iter().map(|t| t.tokens.len()).sum()
    }

    pub fn scaled(&self, c: f64) -> MultimodalSentence {
        MultimodalSentence {
            terminals: self
                .terminals
                .iter()
                .map(|t| MultimodalTerminal {
                    tokens: t.tokens.iter().map(|tok| tok.scaled(c)).collect(),
                    anchor: t.anchor,
                })
                .collect(),
        }
    }
}

/// The dialogue act chosen for a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub act: String,
    pub slots: BTreeMap<String, String>,
    pub score: f64,
    pub rule_id: String,
    /// Chosen alternative index per token, in sentence token order.
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AmbiguityFlag {
    /// Rivals differ in which recognizer alternatives they use.
    ModalPropagated,
    /// Rivals share the token reading but match contrasting rules.
    MultimodalConflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub flags: BTreeSet<AmbiguityFlag>,
    pub rival_count: usize,
}

impl AmbiguityReport {
    pub fn is_ambiguous(&self) -> bool {
        self.rival_count > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputAct {
    pub channel: String,
    pub content: String,
    pub redundant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutputPlan {
    pub acts: Vec<OutputAct>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceKind {
    Gateway,
    Broker,
    Recognizer,
    Fusion,
    Interpreter,
    Fission,
    Knowledge,
}

impl ServiceKind {
    /// Cloud layer each kind of service is provided at.
    pub fn layer(self) -> Layer {
        match self {
            ServiceKind::Gateway => Layer::Saas,
            ServiceKind::Knowledge => Layer::Iaas,
            _ => Layer::Paas,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Gateway => "GATEWAY",
            ServiceKind::Broker => "BROKER",
            ServiceKind::Recognizer => "RECOGNIZER",
            ServiceKind::Fusion => "FUSION",
            ServiceKind::Interpreter => "INTERPRETER",
            ServiceKind::Fission => "FISSION",
            ServiceKind::Knowledge => "KNOWLEDGE",
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    Saas,
    Paas,
    Iaas,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Saas => "SAAS",
            Layer::Paas => "PAAS",
            Layer::Iaas => "IAAS",
        })
    }
}

/// A registry entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub service_id: String,
    pub kind: ServiceKind,
    #[serde(default)]
    pub modality: Option<String>,
    pub layer: Layer,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub endpoint: String,
    #[serde(default)]
    pub lease_expiry: Timestamp,
}

impl ServiceDescriptor {
    /// A descriptor with the layer implied by `kind` and no lease yet.
    pub fn new(
        service_id: impl Into<String>,
        kind: ServiceKind,
        parent_id: Option<&str>,
        endpoint: impl Into<String>,
    ) -> Self {
        ServiceDescriptor {
            service_id: service_id.into(),
            kind,
            modality: None,
            layer: kind.layer(),
            parent_id: parent_id.map(str::to_owned),
            endpoint: endpoint.into(),
            lease_expiry: Timestamp::ZERO,
        }
    }

    pub fn with_modality(mut self, modality: impl Into<String>) -> Self {
        self.modality = Some(modality.into());
        self
    }

    /// Checks the descriptor's local invariants. The parent link is only
    /// required to be present here; the registry checks that it names the
    /// gateway.
    pub fn validate(&self) -> Result<(), InvariantError> {
        let err = |msg| Err(InvariantError::Descriptor(self.service_id.clone(), msg));
        if self.service_id.is_empty() {
            return err("empty service id");
        }
        if self.endpoint.is_empty() {
            return err("empty endpoint");
        }
        match (self.kind, &self.modality) {
            (ServiceKind::Recognizer, None) => return err("recognizer without modality"),
            (ServiceKind::Recognizer, Some(m)) if m.is_empty() => return err("recognizer without modality"),
            (ServiceKind::Recognizer, Some(_)) => {}
            (_, Some(_)) => return err("only recognizers carry a modality"),
            (_, None) => {}
        }
        if self.layer != self.kind.layer() {
            return err("layer does not match service kind");
        }
        match (self.kind, &self.parent_id) {
            (ServiceKind::Gateway, Some(_)) => err("gateway has a parent"),
            (ServiceKind::Gateway, None) => Ok(()),
            (_, None) => err("missing parent"),
            (_, Some(_)) => Ok(()),
        }
    }
}
