//! Multimodal interaction services: recognition, fusion, grammar-driven
//! interpretation, knowledge-based personalisation and output fission,
//! coordinated by a gateway over a leased service registry and an
//! autoscaling broker.
//!
//! Every service speaks MIS-WP/1 envelopes ([`codec`]) and can be reached
//! in-process or over TCP ([`transport`]). The [`harness`] replays scenario
//! files through the whole mesh under a virtual clock.

pub mod broker;
pub mod clock;
pub mod codec;
pub mod fission;
pub mod fusion;
pub mod gateway;
pub mod harness;
pub mod interpretation;
pub mod knowledge;
pub mod mesh;
pub mod recognition;
pub mod registry;
pub mod transport;
pub mod types;

pub use types::{
    Alternative, AmbiguityFlag, AmbiguityReport, Interpretation, Interval, InvariantError, Layer, ModalEvent,
    ModalToken, MultimodalSentence, MultimodalTerminal, OutputAct, OutputPlan, Payload, ServiceDescriptor, ServiceKind,
    Timestamp,
};
