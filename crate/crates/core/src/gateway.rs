//! I/O communication management and multimodal interaction management.
//!
//! The I/O side segments each session's event stream into turns (silence gap
//! or explicit end marker). The interaction-management side runs a turn
//! through recognition, fusion, interpretation and fission, calling every
//! service through [`Client`] so the envelope codec is always on the path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpretation::Boosts;
use crate::mesh::{Client, ClientError, FAULT_NO_MATCH};
use crate::transport::Transport;
use crate::types::{
    AmbiguityReport, Interpretation, ModalEvent, ModalToken, MultimodalSentence, OutputPlan, ServiceDescriptor,
    ServiceKind, Timestamp,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("event for session {event} delivered to session {session}")]
    WrongSession { session: String, event: String },
    #[error("event starting at {start} arrived after one starting at {previous}")]
    OutOfOrder { start: u64, previous: u64 },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid gateway config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// Silence longer than this closes the open turn.
    pub tau_end_ms: u64,
    /// Virtual cost of one service invocation.
    pub invoke_cost_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { tau_end_ms: 1000, invoke_cost_ms: 10 }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.tau_end_ms == 0 {
            return Err(GatewayError::InvalidConfig("tau_end_ms must be positive"));
        }
        Ok(())
    }
}

/// A closed turn: the events of one user command span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub session_id: String,
    pub index: u64,
    pub events: Vec<ModalEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    session_id: String,
    buffer: Vec<ModalEvent>,
    last_event_time: Option<Timestamp>,
    turn_counter: u64,
    closed: bool,
}

impl Session {
    pub fn new(session_id: impl Into<String>) -> Self {
        Session {
            session_id: session_id.into(),
            buffer: Vec::new(),
            last_event_time: None,
            turn_counter: 0,
            closed: false,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn buffered(&self) -> &[ModalEvent] {
        &self.buffer
    }

    pub fn turn_counter(&self) -> u64 {
        self.turn_counter
    }

    fn emit(&mut self) -> Option<Turn> {
        if self.buffer.is_empty() {
            return None;
        }
        let turn = Turn {
            session_id: self.session_id.clone(),
            index: self.turn_counter,
            events: std::mem::take(&mut self.buffer),
        };
        self.turn_counter += 1;
        Some(turn)
    }

    /// Buffers `e`. A silence gap longer than `tau_end_ms` since the end of
    /// the previous input first closes the buffered turn; an `end_turn`
    /// marker then closes the turn ending with `e`. Returns the closed
    /// turns in order (zero, one, or both).
    pub fn ingest_event(&mut self, e: ModalEvent, cfg: &GatewayConfig) -> Result<Vec<Turn>, GatewayError> {
        if self.closed {
            return Err(GatewayError::SessionClosed(self.session_id.clone()));
        }
        if e.session_id != self.session_id {
            return Err(GatewayError::WrongSession { session: self.session_id.clone(), event: e.session_id });
        }
        e.validate().map_err(|err| GatewayError::InvalidEvent(err.to_string()))?;
        if let Some(prev) = self.buffer.last() {
            if e.interval.start() < prev.interval.start() {
                return Err(GatewayError::OutOfOrder {
                    start: e.interval.start().millis(),
                    previous: prev.interval.start().millis(),
                });
            }
        }

        let mut closed = Vec::new();
        if let Some(last) = self.last_event_time {
            if e.interval.start().millis().saturating_sub(last.millis()) > cfg.tau_end_ms {
                closed.extend(self.emit());
            }
        }
        self.last_event_time = Some(self.last_event_time.map_or(e.interval.end(), |t| t.max(e.interval.end())));
        let end_turn = e.end_turn;
        self.buffer.push(e);
        if end_turn {
            closed.extend(self.emit());
        }
        Ok(closed)
    }

    /// Closes the open turn if the session has been silent longer than `tau_end_ms`.
    pub fn poll(&mut self, now: Timestamp, cfg: &GatewayConfig) -> Option<Turn> {
        let last = self.last_event_time?;
        if now.millis().saturating_sub(last.millis()) > cfg.tau_end_ms {
            self.emit()
        } else {
            None
        }
    }

    /// Closes the session, returning any buffered events as a final turn.
    pub fn close(&mut self) -> Option<Turn> {
        self.closed = true;
        self.emit()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TurnPhase {
    Collecting,
    Recognizing,
    Fusing,
    Interpreting,
    Responding,
    Done,
    Failed,
}

impl TurnPhase {
    fn successor(self) -> Option<TurnPhase> {
        use TurnPhase::*;
        match self {
            Collecting => Some(Recognizing),
            Recognizing => Some(Fusing),
            Fusing => Some(Interpreting),
            Interpreting => Some(Responding),
            Responding => Some(Done),
            Done | Failed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureReason {
    MeshIncomplete,
    NoTokens,
    NoMatch,
    /// A service answered with an unexpected fault or the transport broke.
    ServiceFault,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::MeshIncomplete => "MESH_INCOMPLETE",
            FailureReason::NoTokens => "NO_TOKENS",
            FailureReason::NoMatch => "NO_MATCH",
            FailureReason::ServiceFault => "SERVICE_FAULT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal phase transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: TurnPhase,
    pub to: TurnPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnState {
    pub phase: TurnPhase,
    pub failure_reason: Option<FailureReason>,
}

impl Default for TurnState {
    fn default() -> Self {
        TurnState { phase: TurnPhase::Collecting, failure_reason: None }
    }
}

impl TurnState {
    /// Moves to `next`, which must be the direct successor of the current phase.
    pub fn advance(&mut self, next: TurnPhase) -> Result<(), IllegalTransition> {
        if self.phase.successor() != Some(next) {
            return Err(IllegalTransition { from: self.phase, to: next });
        }
        self.phase = next;
        Ok(())
    }

    pub fn fail(&mut self, reason: FailureReason) -> Result<(), IllegalTransition> {
        if matches!(self.phase, TurnPhase::Done | TurnPhase::Failed) {
            return Err(IllegalTransition { from: self.phase, to: TurnPhase::Failed });
        }
        self.phase = TurnPhase::Failed;
        self.failure_reason = Some(reason);
        Ok(())
    }
}

/// Something the gateway needs among its children but could not find.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MissingService {
    Kind(ServiceKind),
    Recognizer(String),
}

impl fmt::Display for MissingService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MissingService::Kind(k) => write!(f, "{k}"),
            MissingService::Recognizer(m) => write!(f, "RECOGNIZER:{m}"),
        }
    }
}

impl From<MissingService> for String {
    fn from(m: MissingService) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for MissingService {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if let Some(m) = s.strip_prefix("RECOGNIZER:") {
            return Ok(MissingService::Recognizer(m.to_owned()));
        }
        let kind: ServiceKind = serde_json::from_value(serde_json::Value::String(s.clone())).map_err(|_| s)?;
        Ok(MissingService::Kind(kind))
    }
}

const REQUIRED_KINDS: [ServiceKind; 5] =
    [ServiceKind::Broker, ServiceKind::Fusion, ServiceKind::Interpreter, ServiceKind::Fission, ServiceKind::Knowledge];

/// Checks that `children` of the gateway cover the pipeline services plus a
/// recognizer for every required channel. Returns the sorted missing list.
pub fn mesh_check<'a>(
    children: &[ServiceDescriptor],
    channels: impl IntoIterator<Item = &'a str>,
) -> Result<(), Vec<MissingService>> {
    let kinds: BTreeSet<ServiceKind> = children.iter().map(|d| d.kind).collect();
    let modalities: BTreeSet<&str> =
        children.iter().filter(|d| d.kind == ServiceKind::Recognizer).filter_map(|d| d.modality.as_deref()).collect();
    let mut missing: Vec<MissingService> =
        REQUIRED_KINDS.iter().filter(|k| !kinds.contains(k)).map(|&k| MissingService::Kind(k)).collect();
    let wanted: BTreeSet<&str> = channels.into_iter().collect();
    missing.extend(
        wanted.into_iter().filter(|c| !modalities.contains(c)).map(|c| MissingService::Recognizer(c.to_owned())),
    );
    if missing.is_empty() {
        Ok(())
    } else {
        missing.sort();
        Err(missing)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: TurnPhase,
    pub started_at: Timestamp,
    pub latency_ms: u64,
}

/// Everything observable about one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReport {
    pub session_id: String,
    pub turn_index: u64,
    pub closed_at: Timestamp,
    pub event_count: usize,
    pub phase: TurnPhase,
    pub failure_reason: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<MissingService>,
    pub phases: Vec<PhaseTiming>,
    /// Recognizer instance the broker picked per channel.
    pub instances: BTreeMap<String, String>,
    pub unrecognized: usize,
    pub sentence: Option<MultimodalSentence>,
    pub interpretation: Option<Interpretation>,
    pub ambiguity: Option<AmbiguityReport>,
    pub output: Option<OutputPlan>,
}

impl TurnReport {
    pub fn is_done(&self) -> bool {
        self.phase == TurnPhase::Done
    }
}

/// Phase bookkeeping on the virtual timeline of a single turn.
struct PhaseClock {
    cursor: Timestamp,
    cost: u64,
    current: Option<PhaseTiming>,
    done: Vec<PhaseTiming>,
}

impl PhaseClock {
    fn begin(&mut self, phase: TurnPhase) {
        self.end();
        self.current = Some(PhaseTiming { phase, started_at: self.cursor, latency_ms: 0 });
    }

    fn invoke(&mut self) {
        self.cursor = self.cursor.plus(self.cost);
        if let Some(p) = &mut self.current {
            p.latency_ms += self.cost;
        }
    }

    fn end(&mut self) {
        self.done.extend(self.current.take());
    }
}

/// Inputs of a turn beyond its events.
#[derive(Debug, Clone)]
pub struct TurnContext<'a> {
    pub gateway_id: &'a str,
    pub user_id: &'a str,
    pub now: Timestamp,
    pub cfg: &'a GatewayConfig,
}

/// Drives one turn through the pipeline. Never fails: every problem ends
/// the turn in `FAILED` with a reason.
pub fn run_turn<T: Transport>(turn: &Turn, client: &mut Client<T>, ctx: &TurnContext<'_>) -> TurnReport {
    let mut report = TurnReport {
        session_id: turn.session_id.clone(),
        turn_index: turn.index,
        closed_at: ctx.now,
        event_count: turn.events.len(),
        phase: TurnPhase::Collecting,
        failure_reason: None,
        failure_detail: None,
        missing: Vec::new(),
        phases: Vec::new(),
        instances: BTreeMap::new(),
        unrecognized: 0,
        sentence: None,
        interpretation: None,
        ambiguity: None,
        output: None,
    };
    let mut state = TurnState::default();
    let mut clock = PhaseClock { cursor: ctx.now, cost: ctx.cfg.invoke_cost_ms, current: None, done: Vec::new() };

    let outcome = drive(turn, client, ctx, &mut state, &mut clock, &mut report);
    clock.end();
    if let Err((reason, detail)) = outcome {
        state.fail(reason).expect("a running turn can always fail");
        report.failure_detail = detail;
    }
    report.phase = state.phase;
    report.failure_reason = state.failure_reason;
    report.phases = clock.done;
    report.closed_at = ctx.now;
    report
}

type Failure = (FailureReason, Option<String>);

fn fault(e: ClientError) -> Failure {
    (FailureReason::ServiceFault, Some(e.to_string()))
}

fn drive<T: Transport>(
    turn: &Turn,
    client: &mut Client<T>,
    ctx: &TurnContext<'_>,
    state: &mut TurnState,
    clock: &mut PhaseClock,
    report: &mut TurnReport,
) -> Result<(), Failure> {
    let step = |state: &mut TurnState, clock: &mut PhaseClock, next: TurnPhase| {
        state.advance(next).expect("phases are advanced in pipeline order");
        clock.begin(next);
    };
    let session = turn.session_id.as_str();

    step(state, clock, TurnPhase::Recognizing);
    let mut by_channel: BTreeMap<&str, Vec<ModalEvent>> = BTreeMap::new();
    for e in &turn.events {
        by_channel.entry(e.channel.as_str()).or_default().push(e.clone());
    }
    clock.invoke();
    let children = client.children(ctx.gateway_id, ctx.now).map_err(fault)?;
    if let Err(missing) = mesh_check(&children, by_channel.keys().copied()) {
        report.missing = missing;
        return Err((FailureReason::MeshIncomplete, None));
    }
    let recognizer_for = |channel: &str| {
        children
            .iter()
            .find(|d| d.kind == ServiceKind::Recognizer && d.modality.as_deref() == Some(channel))
            .expect("mesh_check guarantees a recognizer per channel")
            .service_id
            .clone()
    };

    let mut tokens: Vec<ModalToken> = Vec::new();
    for (channel, events) in &by_channel {
        clock.invoke();
        let instance = client.assign(channel).map_err(fault)?;
        clock.invoke();
        let recognized = client.recognize(&recognizer_for(channel), session, &instance, events).map_err(fault)?;
        clock.invoke();
        client.complete(channel, &instance).map_err(fault)?;
        report.instances.insert(channel.to_string(), instance);
        report.unrecognized += recognized.unrecognized.len();
        tokens.extend(recognized.tokens);
    }
    if tokens.is_empty() {
        return Err((FailureReason::NoTokens, None));
    }

    step(state, clock, TurnPhase::Fusing);
    clock.invoke();
    let sentence = client.fuse(session, &tokens).map_err(fault)?;
    report.sentence = Some(sentence.clone());

    step(state, clock, TurnPhase::Interpreting);
    clock.invoke();
    let boosts: Boosts = client.boosts(session, ctx.user_id).map_err(fault)?;
    clock.invoke();
    let (interp, ambiguity) = match client.interpret(session, &sentence, &boosts) {
        Ok(v) => v,
        Err(ClientError::Fault { code, .. }) if code == FAULT_NO_MATCH => {
            return Err((FailureReason::NoMatch, None));
        }
        Err(e) => return Err(fault(e)),
    };
    report.interpretation = Some(interp.clone());
    report.ambiguity = Some(ambiguity);

    step(state, clock, TurnPhase::Responding);
    clock.invoke();
    report.output = Some(client.fission(session, &interp).map_err(fault)?);

    state.advance(TurnPhase::Done).expect("responding is followed by done");
    Ok(())
}
