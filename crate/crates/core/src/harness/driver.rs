use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;

use super::{HarnessError, RunConfig, RunReport, Scenario, Totals, TransportKind};
use crate::clock::VirtualClock;
use crate::gateway::{run_turn, Session, Turn, TurnContext, TurnReport};
use crate::interpretation::Grammar;
use crate::knowledge::{HornRule, UserProfile};
use crate::mesh::{
    recognizer_channels, recognizer_id, Client, Mesh, SharedMesh, BROKER_ID, FISSION_ID, FUSION_ID, GATEWAY_ID,
    INTERPRETER_ID, KNOWLEDGE_ID,
};
use crate::recognition::Lexicon;
use crate::transport::{serve, InProc, TcpTransport, Transport};
use crate::types::{ModalEvent, ServiceDescriptor, ServiceKind, Timestamp};

/// Documents a run needs besides the scenario.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub grammar: Grammar,
    pub lexicon: Lexicon,
    pub profile: UserProfile,
    pub rules: Vec<HornRule>,
}

pub fn boot_mesh(inputs: &Inputs, cfg: &RunConfig) -> Result<SharedMesh, HarnessError> {
    cfg.validate()?;
    inputs.profile.validate().map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
    let mesh = Mesh::new(
        cfg.mesh(),
        inputs.lexicon.clone(),
        inputs.grammar.clone(),
        inputs.profile.clone(),
        inputs.rules.clone(),
    )
    .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
    Ok(SharedMesh::new(mesh))
}

/// Owns the virtual clock and the gateway sessions, and feeds events
/// through a mesh reached over `T`.
pub struct Driver<T: Transport> {
    client: Client<T>,
    cfg: RunConfig,
    user_id: String,
    clock: VirtualClock,
    next_tick: u64,
    last_renewal: Timestamp,
    descriptors: Vec<ServiceDescriptor>,
    sessions: BTreeMap<String, Session>,
    turns: Vec<TurnReport>,
}

impl<T: Transport> Driver<T> {
    /// Publishes the gateway and its children, loads the user's preferences
    /// into the knowledge service and runs the first broker tick at t=0.
    pub fn boot(
        transport: T,
        cfg: RunConfig,
        lexicon: &Lexicon,
        channels: &[String],
        profile: &UserProfile,
    ) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let mut client = Client::new(transport, GATEWAY_ID);
        let mut descriptors =
            vec![ServiceDescriptor::new(GATEWAY_ID, ServiceKind::Gateway, None, client.endpoint_for(GATEWAY_ID))];
        let pipeline = [
            (BROKER_ID, ServiceKind::Broker),
            (FUSION_ID, ServiceKind::Fusion),
            (INTERPRETER_ID, ServiceKind::Interpreter),
            (FISSION_ID, ServiceKind::Fission),
            (KNOWLEDGE_ID, ServiceKind::Knowledge),
        ];
        for (id, kind) in pipeline {
            descriptors.push(ServiceDescriptor::new(id, kind, Some(GATEWAY_ID), client.endpoint_for(id)));
        }
        for m in recognizer_channels(lexicon, channels) {
            let id = recognizer_id(&m);
            let endpoint = client.endpoint_for(&id);
            descriptors
                .push(ServiceDescriptor::new(id, ServiceKind::Recognizer, Some(GATEWAY_ID), endpoint).with_modality(m));
        }
        let now = Timestamp(0);
        for d in &descriptors {
            client.publish(d, cfg.lease_ttl_ms, now)?;
        }
        client.assert_facts(&profile.preference_triples())?;
        client.infer()?;

        let mut driver = Driver {
            client,
            cfg,
            user_id: profile.user_id.clone(),
            clock: VirtualClock::new(),
            next_tick: 0,
            last_renewal: now,
            descriptors,
            sessions: BTreeMap::new(),
            turns: Vec::new(),
        };
        driver.run_ticks_through(now)?;
        Ok(driver)
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn turns(&self) -> &[TurnReport] {
        &self.turns
    }

    pub fn client(&mut self) -> &mut Client<T> {
        &mut self.client
    }

    fn tick_time(&self, tick: u64) -> Timestamp {
        Timestamp(tick * self.cfg.tick_ms)
    }

    /// Executes every tick scheduled at or before `t`.
    fn run_ticks_through(&mut self, t: Timestamp) -> Result<Vec<TurnReport>, HarnessError> {
        let mut out = Vec::new();
        while self.tick_time(self.next_tick) <= t {
            out.extend(self.tick()?);
        }
        Ok(out)
    }

    fn tick(&mut self) -> Result<Vec<TurnReport>, HarnessError> {
        let tick = self.next_tick;
        let now = self.tick_time(tick);
        self.next_tick += 1;
        self.clock.advance_to(now);

        if now.millis() >= self.last_renewal.millis() + self.cfg.lease_ttl_ms / 2 {
            for d in &self.descriptors {
                self.client.publish(d, self.cfg.lease_ttl_ms, now)?;
            }
            self.last_renewal = now;
        }

        let due: Vec<Turn> = self.sessions.values_mut().filter_map(|s| s.poll(now, &self.cfg.gateway)).collect();
        let reports = self.run_turns(due);
        self.client.tick(tick)?;
        Ok(reports)
    }

    fn run_turns(&mut self, turns: Vec<Turn>) -> Vec<TurnReport> {
        let ctx = TurnContext {
            gateway_id: GATEWAY_ID,
            user_id: &self.user_id,
            now: self.clock.now(),
            cfg: &self.cfg.gateway,
        };
        let reports: Vec<TurnReport> = turns.iter().map(|t| run_turn(t, &mut self.client, &ctx)).collect();
        self.turns.extend(reports.iter().cloned());
        reports
    }

    /// Advances the clock to the event's start (ticking on the way), then
    /// hands it to its session. Returns the reports of every turn closed.
    pub fn ingest(&mut self, e: ModalEvent) -> Result<Vec<TurnReport>, HarnessError> {
        let at = e.interval.start();
        if at < self.clock.now() {
            return Err(HarnessError::Late { at: at.millis(), now: self.clock.now().millis() });
        }
        let mut reports = self.run_ticks_through(at)?;
        self.clock.advance_to(at);
        let session = self.sessions.entry(e.session_id.clone()).or_insert_with(|| Session::new(e.session_id.clone()));
        let closed = session.ingest_event(e, &self.cfg.gateway)?;
        reports.extend(self.run_turns(closed));
        Ok(reports)
    }

    /// Ticks until every session has flushed its open turn by silence, then
    /// closes all sessions.
    pub fn drain(&mut self) -> Result<Vec<TurnReport>, HarnessError> {
        let mut reports = Vec::new();
        while self.sessions.values().any(|s| !s.buffered().is_empty()) {
            reports.extend(self.tick()?);
        }
        let rest: Vec<Turn> = self.sessions.values_mut().filter_map(Session::close).collect();
        reports.extend(self.run_turns(rest));
        Ok(reports)
    }

    pub fn report(&mut self, scenario: &str, seed: u64) -> Result<RunReport, HarnessError> {
        let mut report = RunReport {
            scenario: scenario.to_owned(),
            seed,
            turns: self.turns.clone(),
            scaling_timeline: self.client.snapshot()?.timeline,
            registry_log: self.client.registry_log()?,
            totals: Totals::default(),
        };
        report.totals = report.compute_totals();
        Ok(report)
    }
}

fn replay<T: Transport>(
    transport: T,
    scenario: &Scenario,
    inputs: &Inputs,
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunReport, HarnessError> {
    let channels: Vec<String> = scenario.required_channels().into_iter().collect();
    let mut driver = Driver::boot(transport, cfg.clone(), &inputs.lexicon, &channels, &inputs.profile)?;
    for e in &scenario.events {
        driver.ingest(e.clone())?;
    }
    driver.drain()?;
    driver.report(&scenario.name, seed)
}

/// Replays `scenario` through a freshly booted mesh and returns the report.
/// With [`TransportKind::Tcp`] the mesh is served on a loopback port for the
/// duration of the run.
pub fn run_scenario(
    scenario: &Scenario,
    inputs: &Inputs,
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunReport, HarnessError> {
    let mesh = Arc::new(boot_mesh(inputs, cfg)?);
    match cfg.transport {
        TransportKind::Inproc => replay(InProc::new(mesh), scenario, inputs, cfg, seed),
        TransportKind::Tcp => {
            let server = serve(TcpListener::bind("127.0.0.1:0")?, mesh)?;
            let transport = TcpTransport::connect(server.addr()).map_err(crate::mesh::ClientError::from)?;
            let report = replay(transport, scenario, inputs, cfg, seed);
            drop(server);
            report
        }
    }
}
