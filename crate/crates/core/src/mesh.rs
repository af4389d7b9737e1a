//! The service mesh behind the gateway: one host process answering the
//! registry, broker, recognizer, fusion, interpreter, fission and knowledge
//! operations of MIS-WP/1, and the typed client the gateway calls them with.
//!
//! Requests carry virtual time in their bodies (`now`); services never read
//! a clock of their own.

use std::collections::BTreeSet;
use std::sync::{Mutex, MutexGuard};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::broker::{Broker, BrokerError, BrokerSnapshot, InstancePool, ScalePolicy, ScalingRecord};
use crate::codec::{Body, CodecError, Envelope};
use crate::fission::{plan, FissionConfig, FissionError};
use crate::fusion::{fuse, FusionConfig};
use crate::interpretation::{interpret, Boosts, Grammar, InterpretError};
use crate::knowledge::{
    boosts_for, Bindings, HornRule, KnowledgeError, KnowledgeStore, Triple, TriplePattern, UserProfile,
};
use crate::recognition::{recognize, Lexicon, Recognition, RecognitionError};
use crate::registry::{Registry, RegistryError, RegistryEvent, RegistryQuery};
use crate::transport::{Handler, Transport, TransportError};
use crate::types::{
    AmbiguityReport, Interpretation, ModalEvent, ModalToken, MultimodalSentence, OutputPlan, ServiceDescriptor,
    ServiceKind, Timestamp,
};

pub const GATEWAY_ID: &str = "iocm";
pub const REGISTRY_ID: &str = "registry";
pub const BROKER_ID: &str = "bs";
pub const FUSION_ID: &str = "fus";
pub const INTERPRETER_ID: &str = "is";
pub const FISSION_ID: &str = "fis";
pub const KNOWLEDGE_ID: &str = "kb";

pub fn recognizer_id(modality: &str) -> String {
    format!("rs-{modality}")
}

pub const FAULT_OPERATION: &str = "fault";
pub const FAULT_NO_MATCH: &str = "NO_MATCH";
pub const FAULT_BAD_REQUEST: &str = "BAD_REQUEST";
pub const FAULT_UNKNOWN_OPERATION: &str = "UNKNOWN_OPERATION";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct MeshConfig {
    pub fusion: FusionConfig,
    pub fission: FissionConfig,
    pub policy: ScalePolicy,
    pub pool_min: usize,
    pub pool_max: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            fusion: FusionConfig::default(),
            fission: FissionConfig::default(),
            policy: ScalePolicy::default(),
            pool_min: 1,
            pool_max: 8,
        }
    }
}

/// A fault returned by a service: machine-readable code plus message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub code: String,
    pub message: String,
}

impl Fault {
    fn new(code: &str, message: impl ToString) -> Self {
        Fault { code: code.to_owned(), message: message.to_string() }
    }
}

impl From<CodecError> for Fault {
    fn from(e: CodecError) -> Self {
        Fault::new(FAULT_BAD_REQUEST, e)
    }
}

impl From<RegistryError> for Fault {
    fn from(e: RegistryError) -> Self {
        let code = match e {
            RegistryError::DuplicateEndpoint { .. } => "DUPLICATE_ENDPOINT",
            RegistryError::InvalidTtl => "INVALID_TTL",
            RegistryError::UnknownParent { .. } => "UNKNOWN_PARENT",
            RegistryError::InvalidDescriptor(_) => "INVALID_DESCRIPTOR",
        };
        Fault::new(code, e)
    }
}

impl From<BrokerError> for Fault {
    fn from(e: BrokerError) -> Self {
        let code = match e {
            BrokerError::EmptyPool(_) => "EMPTY_POOL",
            BrokerError::UnknownInstance(_) => "UNKNOWN_INSTANCE",
            BrokerError::Underflow(_) => "UNDERFLOW",
            BrokerError::UnknownModality(_) => "UNKNOWN_MODALITY",
            BrokerError::InvalidPool { .. } | BrokerError::InvalidPolicy(_) => "CONFIG_INVALID",
        };
        Fault::new(code, e)
    }
}

impl From<RecognitionError> for Fault {
    fn from(e: RecognitionError) -> Self {
        let code = match e {
            RecognitionError::ChannelMismatch(_) => "CHANNEL_MISMATCH",
            _ => FAULT_BAD_REQUEST,
        };
        Fault::new(code, e)
    }
}

impl From<KnowledgeError> for Fault {
    fn from(e: KnowledgeError) -> Self {
        let code = match e {
            KnowledgeError::EmptyTerm => "EMPTY_TERM",
            KnowledgeError::NotRangeRestricted { .. } => "NOT_RANGE_RESTRICTED",
            _ => FAULT_BAD_REQUEST,
        };
        Fault::new(code, e)
    }
}

impl From<InterpretError> for Fault {
    fn from(e: InterpretError) -> Self {
        Fault::new(FAULT_NO_MATCH, e)
    }
}

impl From<FissionError> for Fault {
    fn from(e: FissionError) -> Self {
        let code = match e {
            FissionError::NoOutputChannel => "NO_OUTPUT_CHANNEL",
            FissionError::BadEpsilon(_) => "CONFIG_INVALID",
        };
        Fault::new(code, e)
    }
}

/// State of every service hosted by the mesh.
pub struct Mesh {
    cfg: MeshConfig,
    registry: Registry,
    broker: Broker,
    lexicon: Lexicon,
    grammar: Grammar,
    knowledge: KnowledgeStore,
    rules: Vec<HornRule>,
    profile: UserProfile,
}

impl Mesh {
    pub fn new(
        cfg: MeshConfig,
        lexicon: Lexicon,
        grammar: Grammar,
        profile: UserProfile,
        rules: Vec<HornRule>,
    ) -> Result<Self, BrokerError> {
        Ok(Mesh {
            broker: Broker::new(cfg.policy)?,
            cfg,
            registry: Registry::new(),
            lexicon,
            grammar,
            knowledge: KnowledgeStore::new(),
            rules,
            profile,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn knowledge(&self) -> &KnowledgeStore {
        &self.knowledge
    }

    /// Answers one request. Failures come back as `fault` envelopes.
    pub fn handle(&mut self, req: &Envelope) -> Envelope {
        let op = req.header.operation.as_str();
        match self.dispatch(req) {
            Ok(body) => {
                let mut resp = req.reply(format!("re:{}", req.header.message_id), format!("{op}.ok"));
                resp.body = body;
                resp
            }
            Err(f) => {
                let mut resp = req.reply(format!("re:{}", req.header.message_id), FAULT_OPERATION);
                resp.body.insert("code".into(), f.code.into());
                resp.body.insert("message".into(), f.message.into());
                resp
            }
        }
    }

    fn dispatch(&mut self, req: &Envelope) -> Result<Body, Fault> {
        let mut out = Envelope::default();
        match req.header.operation.as_str() {
            "publish" => {
                let d: ServiceDescriptor = req.get("descriptor")?;
                let ttl: u64 = req.get("ttl")?;
                let now: Timestamp = req.get("now")?;
                let is_recognizer = d.kind == ServiceKind::Recognizer;
                let modality = d.modality.clone();
                let id = self.registry.publish(d, ttl, now)?;
                if let (true, Some(m)) = (is_recognizer, modality) {
                    if self.broker.pool(&m).is_none() {
                        self.broker.add_pool(InstancePool::new(m, self.cfg.pool_min, self.cfg.pool_max)?);
                    }
                }
                out.put("service_id", &id)?;
            }
            "find" => {
                let q: RegistryQuery = req.get_opt("query")?.unwrap_or_default();
                let now: Timestamp = req.get("now")?;
                out.put("services", &self.registry.find(&q, now))?;
            }
            "children" => {
                let parent: String = req.get("parent")?;
                let now: Timestamp = req.get("now")?;
                out.put("services", &self.registry.children(&parent, now))?;
            }
            "deregister" => {
                let id: String = req.get("service_id")?;
                let now: Timestamp = req.get("now")?;
                out.put("removed", &self.registry.deregister(&id, now))?;
            }
            "registry.log" => out.put("events", self.registry.log())?,
            "broker.assign" => {
                let modality: String = req.get("modality")?;
                out.put("instance_id", &self.broker.assign(&modality)?)?;
            }
            "broker.complete" => {
                let modality: String = req.get("modality")?;
                let instance: String = req.get("instance_id")?;
                self.broker.complete(&modality, &instance)?;
            }
            "broker.tick" => {
                let tick: u64 = req.get("tick")?;
                out.put("records", &self.broker.tick(tick))?;
            }
            "broker.snapshot" => out.put("snapshot", &self.broker.snapshot())?,
            "recognize" => {
                let events: Vec<ModalEvent> = req.get("events")?;
                let target = req.header.to_service.as_str();
                if let Some(bad) = events.iter().find(|e| recognizer_id(&e.channel) != target) {
                    return Err(Fault::new(
                        "CHANNEL_MISMATCH",
                        format!("{target} cannot recognize channel {}", bad.channel),
                    ));
                }
                out.put("recognition", &recognize(&events, &self.lexicon)?)?;
            }
            "fuse" => {
                let tokens: Vec<ModalToken> = req.get("tokens")?;
                let cfg = match req.get_opt::<u64>("delta_ms")? {
                    Some(delta_ms) => FusionConfig { delta_ms },
                    None => self.cfg.fusion,
                };
                out.put("sentence", &fuse(&tokens, &cfg))?;
            }
            "interpret" => {
                let sentence: MultimodalSentence = req.get("sentence")?;
                sentence.validate().map_err(|e| Fault::new(FAULT_BAD_REQUEST, e))?;
                let boosts: Boosts = req.get_opt("boosts")?.unwrap_or_default();
                let (interp, ambiguity) = interpret(&sentence, &self.grammar, &boosts)?;
                out.put("interpretation", &interp)?;
                out.put("ambiguity", &ambiguity)?;
            }
            "fission" => {
                let interp: Interpretation = req.get("interpretation")?;
                out.put("plan", &plan(&interp, &self.profile, &self.cfg.fission)?)?;
            }
            "assert" => {
                let triples: Vec<Triple> = req.get("triples")?;
                let added = self.knowledge.assert_facts(triples)?;
                out.put("added", &added)?;
                out.put("size", &self.knowledge.len())?;
            }
            "infer" => {
                let extra: Vec<HornRule> = req.get_opt("rules")?.unwrap_or_default();
                let rules: Vec<HornRule> = self.rules.iter().cloned().chain(extra).collect();
                self.knowledge = self.knowledge.infer(&rules)?;
                out.put("size", &self.knowledge.len())?;
            }
            "query" => {
                let pattern: TriplePattern = req.get("pattern")?;
                out.put("bindings", &self.knowledge.query(&pattern))?;
            }
            "boosts" => {
                let user: String = req.get("user_id")?;
                out.put("boosts", &boosts_for(&self.knowledge, &user))?;
            }
            other => return Err(Fault::new(FAULT_UNKNOWN_OPERATION, format!("unknown operation `{other}`"))),
        }
        Ok(out.body)
    }
}

/// `Mesh` behind a mutex: every operation is atomic with respect to the others.
pub struct SharedMesh(Mutex<Mesh>);

impl SharedMesh {
    pub fn new(mesh: Mesh) -> Self {
        SharedMesh(Mutex::new(mesh))
    }

    pub fn lock(&self) -> MutexGuard<'_, Mesh> {
        self.0.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

impl Handler for SharedMesh {
    fn handle(&self, request: &Envelope) -> Envelope {
        self.lock().handle(request)
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("{code}: {message}")]
    Fault { code: String, message: String },
    #[error("response to {expected} has operation {got}")]
    UnexpectedResponse { expected: String, got: String },
}

/// Typed calls into the mesh over any transport.
pub struct Client<T: Transport> {
    transport: T,
    caller: String,
    next_id: u64,
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T, caller: impl Into<String>) -> Self {
        Client { transport, caller: caller.into(), next_id: 1 }
    }

    pub fn endpoint_for(&self, service_id: &str) -> String {
        format!("{}/{service_id}", self.transport.endpoint_base())
    }

    /// Sends `operation` to `to` and returns the response body.
    pub fn call(&mut self, to: &str, session: &str, operation: &str, body: Body) -> Result<Envelope, ClientError> {
        let mut req = Envelope::request(format!("{}-{}", self.caller, self.next_id), &self.caller, to, operation)
            .with_session(session);
        self.next_id += 1;
        req.body = body;
        let resp = self.transport.call(&req)?;
        if resp.header.operation == FAULT_OPERATION {
            return Err(ClientError::Fault {
                code: resp.get("code").unwrap_or_default(),
                message: resp.get("message").unwrap_or_default(),
            });
        }
        let expected = format!("{operation}.ok");
        if resp.header.operation != expected {
            return Err(ClientError::UnexpectedResponse { expected, got: resp.header.operation });
        }
        Ok(resp)
    }

    fn rpc<R: DeserializeOwned>(
        &mut self,
        to: &str,
        session: &str,
        operation: &str,
        args: &[(&str, &dyn erased::Put)],
        field: &str,
    ) -> Result<R, ClientError> {
        let mut req = Envelope::default();
        for (name, value) in args {
            value.put_into(&mut req, name)?;
        }
        Ok(self.call(to, session, operation, req.body)?.get(field)?)
    }

    pub fn publish(&mut self, d: &ServiceDescriptor, ttl: u64, now: Timestamp) -> Result<String, ClientError> {
        self.rpc(REGISTRY_ID, "", "publish", &[("descriptor", d), ("ttl", &ttl), ("now", &now)], "service_id")
    }

    pub fn find(&mut self, q: &RegistryQuery, now: Timestamp) -> Result<Vec<ServiceDescriptor>, ClientError> {
        self.rpc(REGISTRY_ID, "", "find", &[("query", q), ("now", &now)], "services")
    }

    pub fn children(&mut self, parent: &str, now: Timestamp) -> Result<Vec<ServiceDescriptor>, ClientError> {
        self.rpc(REGISTRY_ID, "", "children", &[("parent", &parent), ("now", &now)], "services")
    }

    pub fn deregister(&mut self, service_id: &str, now: Timestamp) -> Result<bool, ClientError> {
        self.rpc(REGISTRY_ID, "", "deregister", &[("service_id", &service_id), ("now", &now)], "removed")
    }

    pub fn registry_log(&mut self) -> Result<Vec<RegistryEvent>, ClientError> {
        self.rpc(REGISTRY_ID, "", "registry.log", &[], "events")
    }

    pub fn assign(&mut self, modality: &str) -> Result<String, ClientError> {
        self.rpc(BROKER_ID, "", "broker.assign", &[("modality", &modality)], "instance_id")
    }

    pub fn complete(&mut self, modality: &str, instance_id: &str) -> Result<(), ClientError> {
        let mut req = Envelope::default();
        req.put("modality", modality)?;
        req.put("instance_id", instance_id)?;
        self.call(BROKER_ID, "", "broker.complete", req.body).map(|_| ())
    }

    pub fn tick(&mut self, tick: u64) -> Result<Vec<ScalingRecord>, ClientError> {
        self.rpc(BROKER_ID, "", "broker.tick", &[("tick", &tick)], "records")
    }

    pub fn snapshot(&mut self) -> Result<BrokerSnapshot, ClientError> {
        self.rpc(BROKER_ID, "", "broker.snapshot", &[], "snapshot")
    }

    pub fn recognize(
        &mut self,
        recognizer: &str,
        session: &str,
        instance_id: &str,
        events: &[ModalEvent],
    ) -> Result<Recognition, ClientError> {
        self.rpc(recognizer, session, "recognize", &[("instance_id", &instance_id), ("events", &events)], "recognition")
    }

    pub fn fuse(&mut self, session: &str, tokens: &[ModalToken]) -> Result<MultimodalSentence, ClientError> {
        self.rpc(FUSION_ID, session, "fuse", &[("tokens", &tokens)], "sentence")
    }

    pub fn interpret(
        &mut self,
        session: &str,
        sentence: &MultimodalSentence,
        boosts: &Boosts,
    ) -> Result<(Interpretation, AmbiguityReport), ClientError> {
        let mut req = Envelope::default();
        req.put("sentence", sentence)?;
        req.put("boosts", boosts)?;
        let resp = self.call(INTERPRETER_ID, session, "interpret", req.body)?;
        Ok((resp.get("interpretation")?, resp.get("ambiguity")?))
    }

    pub fn fission(&mut self, session: &str, interp: &Interpretation) -> Result<OutputPlan, ClientError> {
        self.rpc(FISSION_ID, session, "fission", &[("interpretation", interp)], "plan")
    }

    pub fn assert_facts(&mut self, triples: &[Triple]) -> Result<usize, ClientError> {
        self.rpc(KNOWLEDGE_ID, "", "assert", &[("triples", &triples)], "size")
    }

    pub fn infer(&mut self) -> Result<usize, ClientError> {
        self.rpc(KNOWLEDGE_ID, "", "infer", &[], "size")
    }

    pub fn query(&mut self, pattern: &TriplePattern) -> Result<Vec<Bindings>, ClientError> {
        self.rpc(KNOWLEDGE_ID, "", "query", &[("pattern", pattern)], "bindings")
    }

    pub fn boosts(&mut self, session: &str, user_id: &str) -> Result<Boosts, ClientError> {
        self.rpc(KNOWLEDGE_ID, session, "boosts", &[("user_id", &user_id)], "boosts")
    }
}

mod erased {
    use super::*;

    /// Object-safe "serialize into a body field".
    pub trait Put {
        fn put_into(&self, e: &mut Envelope, field: &str) -> Result<(), CodecError>;
    }

    impl<T: Serialize + ?Sized> Put for T {
        fn put_into(&self, e: &mut Envelope, field: &str) -> Result<(), CodecError> {
            e.put(field, self)
        }
    }
}

/// Channels a lexicon can recognize plus any the caller insists on.
pub fn recognizer_channels(lexicon: &Lexicon, extra: &[String]) -> BTreeSet<String> {
    let mut channels = lexicon.channels();
    channels.extend(extra.iter().cloned());
    channels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::InProc;
    use std::sync::Arc;

    fn client() -> Client<InProc<SharedMesh>> {
        let profile = UserProfile {
            user_id: "u1".into(),
            preferences: vec![],
            output_channels: [("display".to_string(), 1.0)].into(),
        };
        let mesh = Mesh::new(MeshConfig::default(), Lexicon::default(), Grammar::default(), profile, vec![]).unwrap();
        Client::new(InProc::new(Arc::new(SharedMesh::new(mesh))), GATEWAY_ID)
    }

    #[test]
    fn registry_round_trip_over_envelopes() {
        let mut c = client();
        let gw = ServiceDescriptor::new(GATEWAY_ID, ServiceKind::Gateway, None, c.endpoint_for(GATEWAY_ID));
        c.publish(&gw, 1000, Timestamp(0)).unwrap();
        let rs =
            ServiceDescriptor::new("rs-speech", ServiceKind::Recognizer, Some(GATEWAY_ID), c.endpoint_for("rs-speech"))
                .with_modality("speech");
        assert_eq!(c.publish(&rs, 1000, Timestamp(0)).unwrap(), "rs-speech");
        let kids = c.children(GATEWAY_ID, Timestamp(1)).unwrap();
        assert_eq!(kids.len(), 1);
        assert_eq!(kids[0].endpoint, "inproc://mesh/rs-speech");
        // Publishing a recognizer provisions its instance pool.
        assert_eq!(c.assign("speech").unwrap(), "speech-1");
        c.complete("speech", "speech-1").unwrap();
        assert!(c.deregister("rs-speech", Timestamp(2)).unwrap());
        assert_eq!(c.registry_log().unwrap().len(), 3);
    }

    #[test]
    fn faults_carry_codes() {
        let mut c = client();
        match c.assign("speech") {
            Err(ClientError::Fault { code, .. }) => assert_eq!(code, "UNKNOWN_MODALITY"),
            other => panic!("unexpected {other:?}"),
        }
        match c.call("x", "", "nonsense", Body::new()) {
            Err(ClientError::Fault { code, .. }) => assert_eq!(code, FAULT_UNKNOWN_OPERATION),
            other => panic!("unexpected {other:?}"),
        }
        match c.interpret("s1", &MultimodalSentence::default(), &Boosts::none()) {
            Err(ClientError::Fault { code, .. }) => assert_eq!(code, FAULT_NO_MATCH),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn knowledge_operations() {
        let mut c = client();
        assert_eq!(c.assert_facts(&[Triple::new("u1", "boost_rule", "R")]).unwrap(), 1);
        assert_eq!(c.infer().unwrap(), 1);
        assert_eq!(c.query(&TriplePattern::new("?u", "boost_rule", "?r")).unwrap().len(), 1);
        assert_eq!(c.boosts("s1", "u1").unwrap().get("R"), 1.25);
    }
}
