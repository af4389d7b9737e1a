//! Brute-force reference implementations. Each one is written from the
//! behavioural definition alone and shares no code with the library beyond
//! its plain data types.

use std::collections::{BTreeMap, BTreeSet};

use mis_core::broker::{ScaleEvent, ScalePolicy};
use mis_core::interpretation::{Boosts, Grammar};
use mis_core::knowledge::{HornRule, Term, Triple, TriplePattern};
use mis_core::{AmbiguityFlag, Interval, ModalToken, MultimodalSentence};
use serde_json::Value;

// ---------------------------------------------------------------- fusion

pub fn near(a: &Interval, b: &Interval, delta: u64) -> bool {
    let (a0, a1, b0, b1) = (a.start().millis(), a.end().millis(), b.start().millis(), b.end().millis());
    let overlap = a0 <= b1 && b0 <= a1;
    let gap = b0.saturating_sub(a1).max(a0.saturating_sub(b1));
    overlap || gap <= delta
}

fn token_key(t: &ModalToken) -> (u64, String, u64, String, String, u64) {
    (
        t.interval.start().millis(),
        t.channel.clone(),
        t.interval.end().millis(),
        t.symbol.clone(),
        serde_json::to_string(&t.payload).unwrap(),
        t.confidence.to_bits(),
    )
}

fn valid_group(group: &[ModalToken], delta: u64) -> bool {
    for (i, a) in group.iter().enumerate() {
        for b in &group[i + 1..] {
            if a.channel == b.channel || !near(&a.interval, &b.interval, delta) {
                return false;
            }
        }
    }
    true
}

/// Enumerates every partition of the time-ordered tokens into consecutive
/// groups, keeps those whose groups are channel-exclusive and pairwise near,
/// and returns the one whose group sizes are lexicographically largest
/// (earliest groups as large as possible).
pub fn fuse(tokens: &[ModalToken], delta: u64) -> Vec<Vec<ModalToken>> {
    let mut ordered = tokens.to_vec();
    ordered.sort_by_key(token_key);
    let n = ordered.len();
    if n == 0 {
        return Vec::new();
    }
    let mut best: Option<Vec<usize>> = None;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut sizes = Vec::new();
        let mut run = 1;
        for i in 0..n - 1 {
            if cuts & (1 << i) != 0 {
                sizes.push(run);
                run = 1;
            } else {
                run += 1;
            }
        }
        sizes.push(run);
        let mut at = 0;
        let ok = sizes.iter().all(|&s| {
            let g = valid_group(&ordered[at..at + s], delta);
            at += s;
            g
        });
        if ok && best.as_ref().is_none_or(|b| sizes > *b) {
            best = Some(sizes);
        }
    }
    let mut out = Vec::new();
    let mut at = 0;
    for s in best.expect("all-singleton partition is always valid") {
        let mut g = ordered[at..at + s].to_vec();
        g.sort_by(|a, b| a.channel.cmp(&b.channel));
        out.push(g);
        at += s;
    }
    out
}

// ---------------------------------------------------------- interpretation

#[derive(Debug, Clone, PartialEq)]
pub struct Judgement {
    pub rule_id: String,
    pub act: String,
    pub assignment: Vec<usize>,
    pub slots: BTreeMap<String, String>,
    pub score: f64,
    pub flags: BTreeSet<AmbiguityFlag>,
    pub rival_count: usize,
}

pub const REL_TOL: f64 = 1e-9;

fn geq(a: f64, b: f64) -> bool {
    a >= b - REL_TOL * b.abs()
}

fn all_assignments(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        out = out.into_iter().flat_map(|p| (0..n).map(move |j| [p.clone(), vec![j]].concat())).collect();
    }
    out
}

/// (rule_id, act, assignment, slots, score)
type Candidate = (String, String, Vec<usize>, BTreeMap<String, String>, f64);

/// Full enumeration of (rule, assignment) pairs.
pub fn interpret(sentence: &MultimodalSentence, grammar: &Grammar, boosts: &Boosts) -> Option<Judgement> {
    let tokens: Vec<&ModalToken> = sentence.terminals.iter().flat_map(|t| &t.tokens).collect();
    let sizes: Vec<usize> = tokens.iter().map(|t| t.alternatives.len()).collect();
    let mut cands: Vec<Candidate> = Vec::new();
    for rule in &grammar.rules {
        if rule.pattern.len() != sentence.terminals.len() {
            continue;
        }
        'assign: for a in all_assignments(&sizes) {
            let mut slots = BTreeMap::new();
            let mut base = 0;
            for (pat, term) in rule.pattern.iter().zip(&sentence.terminals) {
                let pick = |channel: &str| {
                    term.tokens
                        .iter()
                        .position(|t| t.channel == channel)
                        .map(|i| &term.tokens[i].alternatives[a[base + i]])
                };
                for r in &pat.requirements {
                    match pick(&r.channel) {
                        Some(alt) if alt.symbol == r.symbol => {}
                        _ => continue 'assign,
                    }
                }
                for c in &pat.captures {
                    match pick(&c.channel).and_then(|alt| alt.payload.get(&c.key)) {
                        Some(v) => {
                            slots.insert(c.slot.clone(), v.clone());
                        }
                        None => continue 'assign,
                    }
                }
                base += term.tokens.len();
            }
            let mut score = rule.weight * boosts.0.get(&rule.rule_id).copied().unwrap_or(1.0);
            for (t, &j) in tokens.iter().zip(&a) {
                score *= t.alternatives[j].confidence;
            }
            cands.push((rule.rule_id.clone(), rule.act.clone(), a, slots, score));
        }
    }
    let max = cands.iter().map(|c| c.4).fold(f64::NEG_INFINITY, f64::max);
    let winner = cands.iter().filter(|c| geq(c.4, max)).min_by(|x, y| (&x.0, &x.2).cmp(&(&y.0, &y.2)))?.clone();
    let band: Vec<_> = cands.iter().filter(|c| geq(c.4, grammar.theta * max)).collect();
    let mut flags = BTreeSet::new();
    for (i, x) in band.iter().enumerate() {
        for y in &band[i + 1..] {
            if x.2 != y.2 {
                flags.insert(AmbiguityFlag::ModalPropagated);
            }
            if x.2 == y.2 && x.0 != y.0 {
                flags.insert(AmbiguityFlag::MultimodalConflict);
            }
        }
    }
    Some(Judgement {
        rule_id: winner.0,
        act: winner.1,
        assignment: winner.2,
        slots: winner.3,
        score: winner.4,
        flags,
        rival_count: band.len() - 1,
    })
}

// --------------------------------------------------------------- knowledge

fn term_str(t: &Term) -> (bool, &str) {
    match t {
        Term::Var(v) => (true, v.as_str()),
        Term::Const(c) => (false, c.as_str()),
    }
}

fn matches(p: &TriplePattern, f: &Triple, env: &BTreeMap<String, String>) -> Option<BTreeMap<String, String>> {
    let mut env = env.clone();
    for (t, v) in [(&p.subject, &f.subject), (&p.predicate, &f.predicate), (&p.object, &f.object)] {
        let (is_var, name) = term_str(t);
        if !is_var {
            if name != v {
                return None;
            }
        } else if let Some(bound) = env.get(name) {
            if bound != v {
                return None;
            }
        } else {
            env.insert(name.to_owned(), v.clone());
        }
    }
    Some(env)
}

fn ground(p: &TriplePattern, env: &BTreeMap<String, String>) -> Triple {
    let g = |t: &Term| {
        let (is_var, name) = term_str(t);
        if is_var {
            env[name].clone()
        } else {
            name.to_owned()
        }
    };
    Triple::new(g(&p.subject), g(&p.predicate), g(&p.object))
}

/// Naive fixpoint: apply every rule to the whole store until nothing changes.
pub fn infer(facts: &BTreeSet<Triple>, rules: &[HornRule]) -> BTreeSet<Triple> {
    let mut store = facts.clone();
    loop {
        let mut derived = BTreeSet::new();
        for r in rules {
            let mut envs = vec![BTreeMap::new()];
            for p in &r.if_patterns {
                envs = envs.iter().flat_map(|e| store.iter().filter_map(|f| matches(p, f, e))).collect();
            }
            for e in &envs {
                for t in &r.then_templates {
                    derived.insert(ground(t, e));
                }
            }
        }
        let before = store.len();
        store.extend(derived);
        if store.len() == before {
            return store;
        }
    }
}

// ------------------------------------------------------------------ broker

#[derive(Debug, Clone, PartialEq)]
pub struct LoadStep {
    pub tick: u64,
    pub event: ScaleEvent,
    pub instances: usize,
    /// Whether the average depth exceeded q_hi when the tick was evaluated.
    pub overloaded: bool,
}

/// Hand-replay of the autoscaling policy with real-valued averages.
pub fn replay_load(
    schedule: &[u32],
    policy: &ScalePolicy,
    min: usize,
    max: usize,
    service: u32,
    modality: &str,
) -> Vec<LoadStep> {
    let mut pool: Vec<(String, u32)> = (1..=min).map(|i| (format!("{modality}-{i}"), 0)).collect();
    let mut serial = min;
    let mut streak = 0u32;
    let mut out = Vec::new();
    for (tick, &a) in schedule.iter().enumerate() {
        for _ in 0..a {
            let k = (0..pool.len()).min_by(|&x, &y| pool[x].1.cmp(&pool[y].1).then(pool[x].0.cmp(&pool[y].0))).unwrap();
            pool[k].1 += 1;
        }
        let avg = pool.iter().map(|p| p.1 as f64).sum::<f64>() / pool.len() as f64;
        let overloaded = avg > policy.q_hi as f64;
        streak = if overloaded { streak + 1 } else { 0 };
        let event = if streak >= policy.window_w && pool.len() < max {
            serial += 1;
            pool.push((format!("{modality}-{serial}"), 0));
            streak = 0;
            ScaleEvent::Grow
        } else if avg < policy.q_lo as f64 && pool.len() > min && pool.iter().any(|p| p.1 == 0) {
            let k = (0..pool.len()).filter(|&i| pool[i].1 == 0).max_by(|&x, &y| pool[x].0.cmp(&pool[y].0)).unwrap();
            pool.remove(k);
            ScaleEvent::Shrink
        } else {
            ScaleEvent::Hold
        };
        out.push(LoadStep { tick: tick as u64, event, instances: pool.len(), overloaded });
        for p in &mut pool {
            p.1 -= p.1.min(service);
        }
    }
    out
}

// ------------------------------------------------------------------- codec

fn escape(s: &str, out: &mut String) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Straightforward recursive serializer with sorted keys and no whitespace.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    fn go(v: &Value, out: &mut String) {
        match v {
            Value::Null => out.push_str("null"),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Number(n) => out.push_str(&n.to_string()),
            Value::String(s) => escape(s, out),
            Value::Array(xs) => {
                out.push('[');
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    go(x, out);
                }
                out.push(']');
            }
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    escape(k, out);
                    out.push(':');
                    go(&m[k], out);
                }
                out.push('}');
            }
        }
    }
    go(v, &mut out);
    out
}
