//! Seeded random instances shared by the acceptance and property suites.

use std::collections::BTreeSet;

use mis_core::codec::{Body, Envelope};
use mis_core::interpretation::{Boosts, Capture, Grammar, GrammarRule, Requirement, TerminalPattern};
use mis_core::knowledge::{HornRule, Triple, TriplePattern};
use mis_core::{Alternative, Interval, ModalToken, MultimodalSentence, MultimodalTerminal, Payload};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{Number, Value};

pub const CHANNELS: [&str; 3] = ["gaze", "gesture", "speech"];
const SYMBOLS: [&str; 4] = ["a", "b", "c", "d"];
const CONFIDENCES: [f64; 7] = [0.2, 0.4, 0.5, 0.6, 0.8, 0.9, 1.0];

pub fn token(rng: &mut impl Rng, channel: &str, start: u64, len: u64, n_alts: usize) -> ModalToken {
    let mut symbols = SYMBOLS.to_vec();
    symbols.shuffle(rng);
    let alts = symbols[..n_alts]
        .iter()
        .map(|s| {
            let mut payload = Payload::new();
            if rng.gen_bool(0.85) {
                payload.insert("k".into(), format!("{s}{}", rng.gen_range(0..100)));
            }
            Alternative { symbol: s.to_string(), payload, confidence: *CONFIDENCES.choose(rng).unwrap() }
        })
        .collect();
    ModalToken::from_alternatives(channel, Interval::new(start, start + len).unwrap(), alts).unwrap()
}

/// Up to `max_n` single-alternative tokens on random channels and times.
pub fn token_set(rng: &mut impl Rng, max_n: usize) -> Vec<ModalToken> {
    let n = rng.gen_range(1..=max_n);
    (0..n)
        .map(|_| {
            let ch = *CHANNELS.choose(rng).unwrap();
            let start = rng.gen_range(0..30) * 100;
            let len = rng.gen_range(0..8) * 100;
            token(rng, ch, start, len, 1)
        })
        .collect()
}

/// A sentence plus grammar whose rule × assignment count stays within `cap`.
pub fn interpretation_instance(rng: &mut impl Rng, cap: usize) -> (MultimodalSentence, Grammar, Boosts) {
    loop {
        let n_terms = rng.gen_range(1..=3);
        let mut terminals = Vec::new();
        let mut t0 = 0;
        for _ in 0..n_terms {
            let mut chans = CHANNELS.to_vec();
            chans.shuffle(rng);
            let k = rng.gen_range(1..=2);
            let mut toks = Vec::new();
            for c in &chans[..k] {
                let n_alts = rng.gen_range(1..=3);
                toks.push(token(rng, c, t0, 100, n_alts));
            }
            terminals.push(MultimodalTerminal::new(toks).unwrap());
            t0 += 1000;
        }
        let sentence = MultimodalSentence { terminals };
        let n_rules = rng.gen_range(1..=3);
        let alternatives: usize = sentence.tokens().map(|t| t.alternatives.len()).product();
        if n_rules * alternatives > cap {
            continue;
        }
        let rules = (0..n_rules).map(|i| rule_for(rng, &sentence, i)).collect();
        let grammar = Grammar { rules, theta: *[0.5, 0.8, 1.0].choose(rng).unwrap(), beam: 64 };
        grammar.validate().unwrap();
        let mut boosts = Boosts::none();
        if rng.gen_bool(0.3) {
            boosts.0.insert("r0".into(), 1.25);
        }
        return (sentence, grammar, boosts);
    }
}

fn rule_for(rng: &mut impl Rng, sentence: &MultimodalSentence, i: usize) -> GrammarRule {
    // Mostly shaped like the sentence, so matches are common.
    let len = if rng.gen_bool(0.85) { sentence.terminals.len() } else { rng.gen_range(1..=3) };
    let pattern = (0..len)
        .map(|p| {
            let tokens: Vec<(String, Vec<String>)> = match sentence.terminals.get(p) {
                Some(t) => t
                    .tokens
                    .iter()
                    .map(|t| (t.channel.clone(), t.alternatives.iter().map(|a| a.symbol.clone()).collect()))
                    .collect(),
                None => vec![("speech".into(), vec![])],
            };
            let mut requirements = Vec::new();
            let mut captures = Vec::new();
            for (c, symbols) in tokens {
                if rng.gen_bool(0.8) {
                    let symbol = match symbols.choose(rng) {
                        Some(s) if rng.gen_bool(0.8) => s.clone(),
                        _ => SYMBOLS.choose(rng).unwrap().to_string(),
                    };
                    requirements.push(Requirement { channel: c.clone(), symbol });
                    if rng.gen_bool(0.3) {
                        captures.push(Capture { slot: format!("s{p}"), channel: c, key: "k".into() });
                    }
                }
            }
            TerminalPattern { requirements, captures }
        })
        .collect();
    GrammarRule {
        rule_id: format!("r{i}"),
        act: format!("ACT{}", rng.gen_range(0..2)),
        pattern,
        weight: *[0.5, 0.8, 1.0].choose(rng).unwrap(),
    }
}

const CONSTS: [&str; 6] = ["c0", "c1", "c2", "c3", "c4", "c5"];
const PREDS: [&str; 4] = ["p0", "p1", "p2", "p3"];
const VARS: [&str; 3] = ["?x", "?y", "?z"];

pub fn fact(rng: &mut impl Rng) -> Triple {
    Triple::new(*CONSTS.choose(rng).unwrap(), *PREDS.choose(rng).unwrap(), *CONSTS.choose(rng).unwrap())
}

pub fn facts(rng: &mut impl Rng, max: usize) -> BTreeSet<Triple> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| fact(rng)).collect()
}

fn term(rng: &mut impl Rng, pool: &[&str], var_p: f64) -> String {
    if rng.gen_bool(var_p) {
        VARS.choose(rng).unwrap().to_string()
    } else {
        pool.choose(rng).unwrap().to_string()
    }
}

/// A range-restricted rule: head variables are drawn from body variables.
pub fn rule(rng: &mut impl Rng, id: usize) -> HornRule {
    let body: Vec<TriplePattern> = (0..rng.gen_range(1..=3))
        .map(|_| TriplePattern::new(term(rng, &CONSTS, 0.6), term(rng, &PREDS, 0.1), term(rng, &CONSTS, 0.6)))
        .collect();
    let mut bound: Vec<String> = Vec::new();
    for p in &body {
        for t in [&p.subject, &p.predicate, &p.object] {
            let s: String = t.clone().into();
            if s.starts_with('?') && !bound.contains(&s) {
                bound.push(s);
            }
        }
    }
    let head = (0..rng.gen_range(1..=2))
        .map(|_| {
            let s = bound_or_const(rng, &bound);
            let o = bound_or_const(rng, &bound);
            TriplePattern::new(s, *PREDS.choose(rng).unwrap(), o)
        })
        .collect();
    HornRule { rule_id: format!("h{id}"), if_patterns: body, then_templates: head }
}

fn bound_or_const(rng: &mut impl Rng, bound: &[String]) -> String {
    if !bound.is_empty() && rng.gen_bool(0.6) {
        bound.choose(rng).unwrap().clone()
    } else {
        CONSTS.choose(rng).unwrap().to_string()
    }
}

pub fn rules(rng: &mut impl Rng, max: usize) -> Vec<HornRule> {
    (0..rng.gen_range(0..=max)).map(|i| rule(rng, i)).collect()
}

const STRING_PIECES: [&str; 12] = ["a", "Z", "é", "漢", "🙂", "\"", "\\", "\n", "\t", "\u{1}", "/", " "];

pub fn string(rng: &mut impl Rng, max_len: usize) -> String {
    (0..rng.gen_range(0..=max_len)).map(|_| *STRING_PIECES.choose(rng).unwrap()).collect()
}

pub fn value(rng: &mut impl Rng, depth: u32) -> Value {
    let leaf = depth == 0 || rng.gen_bool(0.5);
    match rng.gen_range(0..if leaf { 5 } else { 7 }) {
        0 => Value::Null,
        1 => Value::Bool(rng.gen()),
        2 => Value::from(rng.gen::<i64>() >> rng.gen_range(0..63)),
        3 => {
            let f: f64 = rng.gen_range(-1e6..1e6) / 10f64.powi(rng.gen_range(0..8));
            Value::Number(Number::from_f64(f).unwrap())
        }
        4 => Value::String(string(rng, 6)),
        5 => Value::Array((0..rng.gen_range(0..4)).map(|_| value(rng, depth - 1)).collect()),
        _ => Value::Object((0..rng.gen_range(0..4)).map(|_| (string(rng, 4), value(rng, depth - 1))).collect()),
    }
}

pub fn envelope(rng: &mut impl Rng) -> Envelope {
    let mut op = string(rng, 8);
    if op.is_empty() {
        op.push('o');
    }
    let mut e = Envelope::request(string(rng, 8), string(rng, 8), string(rng, 8), op).with_session(string(rng, 8));
    e.header.correlation_id = string(rng, 8);
    let body: Body = (0..rng.gen_range(0..5)).map(|_| (string(rng, 5), value(rng, 3))).collect();
    e.body = body;
    e
}
