//! Multimodal grammar store and the interpretation/disambiguation service.
//!
//! A rule is a flat sequence of terminal patterns matched position-wise
//! against the terminals of a sentence. Candidates are (rule, assignment)
//! pairs, where an assignment picks one recognizer alternative per token.
//! They are enumerated best-first by the product of the chosen
//! confidences, cut at the grammar's beam, scored, and the winner is
//! classified against its rivals inside the `theta` band.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AmbiguityFlag, AmbiguityReport, Interpretation, ModalToken, MultimodalSentence};

/// Relative tolerance under which two scores count as equal.
pub const SCORE_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("rule id {0} appears more than once")]
    DuplicateRuleId(String),
    #[error("rule {0} has an empty pattern")]
    EmptyPattern(String),
    #[error("rule {rule_id} captures channel {channel} which its terminal does not require")]
    CaptureChannelNotRequired { rule_id: String, channel: String },
    #[error("rule {rule_id} weight {weight} is outside (0, 1]")]
    BadWeight { rule_id: String, weight: f64 },
    #[error("theta {0} is outside (0, 1]")]
    BadTheta(f64),
    #[error("beam must be at least 1")]
    BadBeam,
    #[error("grammar document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpretError {
    #[error("no grammar rule matches the sentence")]
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Requirement {
    pub channel: String,
    pub symbol: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capture {
    pub slot: String,
    pub channel: String,
    /// Payload key whose value fills the slot.
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TerminalPattern {
    pub requirements: Vec<Requirement>,
    #[serde(default)]
    pub captures: Vec<Capture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarRule {
    pub rule_id: String,
    pub act: String,
    pub pattern: Vec<TerminalPattern>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

fn default_theta() -> f64 {
    0.8
}

fn default_beam() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub rules: Vec<GrammarRule>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_beam")]
    pub beam: usize,
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar { rules: Vec::new(), theta: default_theta(), beam: default_beam() }
    }
}

impl Grammar {
    pub fn new(rules: Vec<GrammarRule>) -> Result<Self, GrammarError> {
        let g = Grammar { rules, ..Grammar::default() };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(GrammarError::BadTheta(self.theta));
        }
        if self.beam == 0 {
            return Err(GrammarError::BadBeam);
        }
        let mut ids = HashSet::new();
        for rule in &self.rules {
            if !ids.insert(rule.rule_id.as_str()) {
                return Err(GrammarError::DuplicateRuleId(rule.rule_id.clone()));
            }
            if rule.pattern.is_empty() {
                return Err(GrammarError::EmptyPattern(rule.rule_id.clone()));
            }
            if !(rule.weight > 0.0 && rule.weight <= 1.0) {
                return Err(GrammarError::BadWeight { rule_id: rule.rule_id.clone(), weight: rule.weight });
            }
            for terminal in &rule.pattern {
                for cap in &terminal.captures {
                    if !terminal.requirements.iter().any(|r| r.channel == cap.channel) {
                        return Err(GrammarError::CaptureChannelNotRequired {
                            rule_id: rule.rule_id.clone(),
                            channel: cap.channel.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn rule(&self, rule_id: &str) -> Option<&GrammarRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }
}

/// Parses and validates a grammar document.
pub fn load_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let g: Grammar = serde_json::from_str(text).map_err(|e| GrammarError::Parse(e.to_string()))?;
    g.validate()?;
    Ok(g)
}

/// Per-rule score multipliers supplied by the knowledge services.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Boosts(pub BTreeMap<String, f64>);

impl Boosts {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn get(&self, rule_id: &str) -> f64 {
        self.0.get(rule_id).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub rule_id: String,
    pub assignment: Vec<usize>,
    pub slots: BTreeMap<String, String>,
    pub score: f64,
}

fn locate<'a>(tokens: &'a [ModalToken], channel: &str) -> Option<(usize, &'a ModalToken)> {
    tokens.iter().enumerate().find(|(_, t)| t.channel == channel)
}

/// Matches `rule` against `sentence` under `assignment`, returning the filled
/// slots. Tokens not named by a requirement are ignored.
pub fn match_rule(
    rule: &GrammarRule,
    sentence: &MultimodalSentence,
    assignment: &[usize],
) -> Option<BTreeMap<String, String>> {
    if rule.pattern.len() != sentence.terminals.len() || assignment.len() != sentence.token_count() {
        return None;
    }
    let mut slots = BTreeMap::new();
    let mut offset = 0;
    for (pattern, terminal) in rule.pattern.iter().zip(&sentence.terminals) {
        for req in &pattern.requirements {
            let (i, token) = locate(&terminal.tokens, &req.channel)?;
            let alt = token.alternatives.get(assignment[offset + i])?;
            if alt.symbol != req.symbol {
                return None;
            }
        }
        for cap in &pattern.captures {
            let (i, token) = locate(&terminal.tokens, &cap.channel)?;
            let alt = token.alternatives.get(assignment[offset + i])?;
            slots.insert(cap.slot.clone(), alt.payload.get(&cap.key)?.clone());
        }
        offset += terminal.tokens.len();
    }
    Some(slots)
}

/// Product of the confidences picked by `assignment`, in token order.
fn confidence_product(sentence: &MultimodalSentence, assignment: &[usize]) -> f64 {
    sentence.tokens().zip(assignment).map(|(t, &j)| t.alternatives.get(j).map_or(0.0, |a| a.confidence)).product()
}

/// weight × boost × product of every token's assigned confidence.
pub fn score(candidate: &Candidate, sentence: &MultimodalSentence, grammar: &Grammar, boosts: &Boosts) -> f64 {
    let weight = grammar.rule(&candidate.rule_id).map_or(0.0, |r| r.weight);
    weight * boosts.get(&candidate.rule_id) * confidence_product(sentence, &candidate.assignment)
}

/// For each token, the alternative indices consistent with `rule`'s
/// requirements and captures at that position. `None` if the rule cannot
/// match the sentence shape at all.
fn allowed_alternatives(rule: &GrammarRule, sentence: &MultimodalSentence) -> Option<Vec<Vec<usize>>> {
    if rule.pattern.len() != sentence.terminals.len() {
        return None;
    }
    let mut allowed = Vec::with_capacity(sentence.token_count());
    for (pattern, terminal) in rule.pattern.iter().zip(&sentence.terminals) {
        for req in &pattern.requirements {
            terminal.token_on(&req.channel)?;
        }
        for token in &terminal.tokens {
            let idx: Vec<usize> = token
                .alternatives
                .iter()
                .enumerate()
                .filter(|(_, alt)| {
                    pattern.requirements.iter().filter(|r| r.channel == token.channel).all(|r| r.symbol == alt.symbol)
                        && pattern
                            .captures
                            .iter()
                            .filter(|c| c.channel == token.channel)
                            .all(|c| alt.payload.contains_key(&c.key))
                })
                .map(|(j, _)| j)
                .collect();
            if idx.is_empty() {
                return None;
            }
            allowed.push(idx);
        }
    }
    Some(allowed)
}

/// Heap entry for best-first enumeration. Greater = explored earlier.
struct Frontier {
    product: f64,
    assignment: Vec<usize>,
    rule: usize,
    rule_id: String,
    /// Position in each token's allowed list.
    cursor: Vec<usize>,
    /// Lowest coordinate a successor may advance (each state has one parent).
    pivot: usize,
}

impl Frontier {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.product
            .total_cmp(&other.product)
            .then_with(|| other.assignment.cmp(&self.assignment))
            .then_with(|| other.rule_id.cmp(&self.rule_id))
    }
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Frontier {}
impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Matching candidates in best-first order (confidence product descending,
/// then assignment, then rule id), truncated at `grammar.beam`.
pub fn enumerate_candidates(sentence: &MultimodalSentence, grammar: &Grammar, boosts: &Boosts) -> Vec<Candidate> {
    let mut heap = BinaryHeap::new();
    let mut allowed_by_rule = Vec::with_capacity(grammar.rules.len());
    for (ri, rule) in grammar.rules.iter().enumerate() {
        let allowed = allowed_alternatives(rule, sentence);
        if let Some(allowed) = &allowed {
            let cursor = vec![0; allowed.len()];
            let assignment: Vec<usize> = allowed.iter().map(|a| a[0]).collect();
            heap.push(Frontier {
                product: confidence_product(sentence, &assignment),
                assignment,
                rule: ri,
                rule_id: rule.rule_id.clone(),
                cursor,
                pivot: 0,
            });
        }
        allowed_by_rule.push(allowed);
    }

    let mut out = Vec::new();
    while out.len() < grammar.beam {
        let Some(state) = heap.pop() else { break };
        let rule = &grammar.rules[state.rule];
        let allowed = allowed_by_rule[state.rule].as_ref().expect("only matchable rules are queued");

        for k in state.pivot..state.cursor.len() {
            if state.cursor[k] + 1 < allowed[k].len() {
                let mut cursor = state.cursor.clone();
                cursor[k] += 1;
                let mut assignment = state.assignment.clone();
                assignment[k] = allowed[k][cursor[k]];
                heap.push(Frontier {
                    product: confidence_product(sentence, &assignment),
                    assignment,
                    rule: state.rule,
                    rule_id: state.rule_id.clone(),
                    cursor,
                    pivot: k,
                });
            }
        }

        let slots = match_rule(rule, sentence, &state.assignment).expect("allowed alternatives always match");
        let mut cand = Candidate { rule_id: state.rule_id, assignment: state.assignment, slots, score: 0.0 };
        cand.score = score(&cand, sentence, grammar, boosts);
        out.push(cand);
    }
    out
}

fn at_least(score: f64, bound: f64) -> bool {
    score >= bound - SCORE_TIE_EPSILON * bound.abs()
}

/// Picks the winning interpretation and classifies the ambiguity among the
/// candidates scoring within `theta` of the best.
pub fn interpret(
    sentence: &MultimodalSentence,
    grammar: &Grammar,
    boosts: &Boosts,
) -> Result<(Interpretation, AmbiguityReport), InterpretError> {
    let candidates = enumerate_candidates(sentence, grammar, boosts);
    select(&candidates, grammar).map(|(winner, report)| {
        let rule = grammar.rule(&winner.rule_id).expect("candidate rules come from the grammar");
        (
            Interpretation {
                act: rule.act.clone(),
                slots: winner.slots.clone(),
                score: winner.score,
                rule_id: winner.rule_id.clone(),
                assignment: winner.assignment.clone(),
            },
            report,
        )
    })
}

/// Winner selection and ambiguity classification over a candidate set.
pub fn select<'a>(
    candidates: &'a [Candidate],
    grammar: &Grammar,
) -> Result<(&'a Candidate, AmbiguityReport), InterpretError> {
    let best = candidates.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
    let winner = candidates
        .iter()
        .filter(|c| at_least(c.score, best))
        .min_by(|a, b| a.rule_id.cmp(&b.rule_id).then_with(|| a.assignment.cmp(&b.assignment)))
        .ok_or(InterpretError::NoMatch)?;

    let band: Vec<&Candidate> = candidates.iter().filter(|c| at_least(c.score, grammar.theta * best)).collect();
    let mut flags = BTreeSet::new();
    let assignments: BTreeSet<&[usize]> = band.iter().map(|c| c.assignment.as_slice()).collect();
    if assignments.len() > 1 {
        flags.insert(AmbiguityFlag::ModalPropagated);
    }
    if assignments.len() < band.len() {
        // Pairs are unique, so a repeated assignment means two rules share it.
        flags.insert(AmbiguityFlag::MultimodalConflict);
    }
    Ok((winner, AmbiguityReport { flags, rival_count: band.len() - 1 }))
}
