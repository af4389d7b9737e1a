//! Temporal fusion of recognized tokens into a multimodal sentence.

use serde::{Deserialize, Serialize};

use crate::types::{Interval, ModalToken, MultimodalSentence, MultimodalTerminal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Largest gap (inclusive) between two intervals that still counts as co-temporal.
    pub delta_ms: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { delta_ms: 500 }
    }
}

/// True iff `a` and `b` overlap or are separated by at most `delta_ms`.
pub fn near(a: &Interval, b: &Interval, delta_ms: u64) -> bool {
    let later_start = a.start().max(b.start()).millis();
    let earlier_end = a.end().min(b.end()).millis();
    later_start <= earlier_end.saturating_add(delta_ms)
}

/// Greedy left-to-right grouping in canonical token order.
///
/// A token joins the open terminal iff that terminal has nothing on the
/// token's channel yet and the token is near every member; otherwise the
/// terminal is closed and the token opens a new one.
pub fn fuse(tokens: &[ModalToken], cfg: &FusionConfig) -> MultimodalSentence {
    let mut ordered: Vec<&ModalToken> = tokens.iter().collect();
    ordered.sort_by(|a, b| a.canonical_cmp(b));

    let mut groups: Vec<Vec<ModalToken>> = Vec::new();
    let mut open: Vec<ModalToken> = Vec::new();
    for token in ordered {
        let fits = open.iter().all(|m| m.channel != token.channel && near(&m.interval, &token.interval, cfg.delta_ms));
        if !fits {
            groups.push(std::mem::take(&mut open));
        }
        open.push(token.clone());
    }
    if !open.is_empty() {
        groups.push(open);
    }

    let terminals = groups
        .into_iter()
        .map(|g| MultimodalTerminal::new(g).expect("greedy groups are non-empty with distinct channels"))
        .collect();
    MultimodalSentence { terminals }
}
