//! Knowledge services: a triple store, range-restricted Horn rules with
//! forward chaining to a least fixpoint, user profiles, and the boosts that
//! feed disambiguation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpretation::Boosts;

/// Multiplier applied to a rule a user's facts mark as boosted.
pub const BOOST_MULTIPLIER: f64 = 1.25;

/// Predicate linking a user to a grammar rule id it should favor.
pub const BOOST_PREDICATE: &str = "boost_rule";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KnowledgeError {
    #[error("triple has an empty term")]
    EmptyTerm,
    #[error("rule {rule_id}: variable ?{var} in a conclusion is not bound by its premises")]
    NotRangeRestricted { rule_id: String, var: String },
    #[error("suitability of channel {channel} is {value}, outside [0, 1]")]
    BadSuitability { channel: String, value: f64 },
    #[error("document: {0}")]
    Parse(String),
}

/// A ground fact, serialized as `[subject, predicate, object]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String, String)", into = "(String, String, String)")]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(s: impl Into<String>, p: impl Into<String>, o: impl Into<String>) -> Self {
        Triple { subject: s.into(), predicate: p.into(), object: o.into() }
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.subject.is_empty() || self.predicate.is_empty() || self.object.is_empty() {
            return Err(KnowledgeError::EmptyTerm);
        }
        Ok(())
    }
}

impl From<(String, String, String)> for Triple {
    fn from((subject, predicate, object): (String, String, String)) -> Self {
        Triple { subject, predicate, object }
    }
}

impl From<Triple> for (String, String, String) {
    fn from(t: Triple) -> Self {
        (t.subject, t.predicate, t.object)
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

/// A pattern term: `?name` is a variable, anything else a constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Term {
    Const(String),
    Var(String),
}

impl From<String> for Term {
    fn from(s: String) -> Self {
        match s.strip_prefix('?') {
            Some(name) => Term::Var(name.to_owned()),
            None => Term::Const(s),
        }
    }
}

impl From<&str> for Term {
    fn from(s: &str) -> Self {
        Term::from(s.to_owned())
    }
}

impl From<Term> for String {
    fn from(t: Term) -> Self {
        match t {
            Term::Const(c) => c,
            Term::Var(v) => format!("?{v}"),
        }
    }
}

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(Term, Term, Term)", into = "(Term, Term, Term)")]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl TriplePattern {
    pub fn new(s: impl Into<Term>, p: impl Into<Term>, o: impl Into<Term>) -> Self {
        TriplePattern { subject: s.into(), predicate: p.into(), object: o.into() }
    }

    fn terms(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms().into_iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    /// Extends `b` so that the pattern equals `fact`, if possible.
    fn unify(&self, fact: &Triple, b: &Bindings) -> Option<Bindings> {
        let mut out = b.clone();
        for (term, value) in self.terms().into_iter().zip([&fact.subject, &fact.predicate, &fact.object]) {
            match term {
                Term::Const(c) if c != value => return None,
                Term::Const(_) => {}
                Term::Var(v) => match out.get(v) {
                    Some(bound) if bound != value => return None,
                    Some(_) => {}
                    None => {
                        out.insert(v.clone(), value.clone());
                    }
                },
            }
        }
        Some(out)
    }

    /// Grounds a template; callers guarantee every variable is bound.
    fn instantiate(&self, b: &Bindings) -> Triple {
        let ground = |t: &Term| match t {
            Term::Const(c) => c.clone(),
            Term::Var(v) => b[v].clone(),
        };
        Triple { subject: ground(&self.subject), predicate: ground(&self.predicate), object: ground(&self.object) }
    }
}

impl From<(Term, Term, Term)> for TriplePattern {
    fn from((subject, predicate, object): (Term, Term, Term)) -> Self {
        TriplePattern { subject, predicate, object }
    }
}

impl From<TriplePattern> for (Term, Term, Term) {
    fn from(p: TriplePattern) -> Self {
        (p.subject, p.predicate, p.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HornRule {
    pub rule_id: String,
    #[serde(rename = "if")]
    pub if_patterns: Vec<TriplePattern>,
    #[serde(rename = "then")]
    pub then_templates: Vec<TriplePattern>,
}

impl HornRule {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let bound: BTreeSet<&str> = self.if_patterns.iter().flat_map(TriplePattern::vars).collect();
        for template in &self.then_templates {
            if let Some(var) = template.vars().find(|v| !bound.contains(v)) {
                return Err(KnowledgeError::NotRangeRestricted { rule_id: self.rule_id.clone(), var: var.to_owned() });
            }
        }
        let empty = |t: &Term| matches!(t, Term::Const(c) if c.is_empty()) || matches!(t, Term::Var(v) if v.is_empty());
        if self.if_patterns.iter().chain(&self.then_templates).any(|p| p.terms().into_iter().any(empty)) {
            return Err(KnowledgeError::EmptyTerm);
        }
        Ok(())
    }
}

pub fn parse_rules(text: &str) -> Result<Vec<HornRule>, KnowledgeError> {
    let rules: Vec<HornRule> = serde_json::from_str(text).map_err(|e| KnowledgeError::Parse(e.to_string()))?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

/// Set of ground triples.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeStore {
    facts: BTreeSet<Triple>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_facts(facts: impl IntoIterator<Item = Triple>) -> Result<Self, KnowledgeError> {
        let mut s = Self::new();
        s.assert_facts(facts)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.facts.contains(t)
    }

    pub fn facts(&self) -> &BTreeSet<Triple> {
        &self.facts
    }

    pub fn is_subset(&self, other: &KnowledgeStore) -> bool {
        self.facts.is_subset(&other.facts)
    }

    /// Adds `triples` with set semantics. Nothing is added if any is invalid.
    /// Returns how many facts were new.
    pub fn assert_facts(&mut self, triples: impl IntoIterator<Item = Triple>) -> Result<usize, KnowledgeError> {
        let triples: Vec<Triple> = triples.into_iter().collect();
        for t in &triples {
            t.validate()?;
        }
        Ok(triples.into_iter().filter(|t| self.facts.insert(t.clone())).count())
    }

    /// All bindings of the pattern's variables against the store, in fact order.
    pub fn query(&self, pattern: &TriplePattern) -> Vec<Bindings> {
        self.facts.iter().filter_map(|f| pattern.unify(f, &Bindings::new())).collect()
    }

    /// Least fixpoint of `rules` over the store, by semi-naive evaluation:
    /// each round only considers derivations that use at least one fact
    /// produced in the previous round.
    pub fn infer(&self, rules: &[HornRule]) -> Result<KnowledgeStore, KnowledgeError> {
        for r in rules {
            r.validate()?;
        }
        let mut all = self.facts.clone();
        let mut delta = self.facts.clone();
        let mut first_round = true;
        loop {
            let index = PredicateIndex::build(&all);
            let delta_index = PredicateIndex::build(&delta);
            let mut fresh = BTreeSet::new();
            for rule in rules {
                if rule.if_patterns.is_empty() {
                    if first_round {
                        fresh.extend(rule.then_templates.iter().map(|t| t.instantiate(&Bindings::new())));
                    }
                    continue;
                }
                for pivot in 0..rule.if_patterns.len() {
                    let mut sink = |b: &Bindings| {
                        for t in &rule.then_templates {
                            let fact = t.instantiate(b);
                            if !all.contains(&fact) {
                                fresh.insert(fact);
                            }
                        }
                    };
                    join(&rule.if_patterns, 0, pivot, &index, &delta_index, &Bindings::new(), &mut sink);
                }
            }
            first_round = false;
            fresh.retain(|f| !all.contains(f));
            if fresh.is_empty() {
                break;
            }
            all.extend(fresh.iter().cloned());
            delta = fresh;
        }
        Ok(KnowledgeStore { facts: all })
    }
}

/// Facts grouped by predicate.
struct PredicateIndex<'a> {
    by_predicate: BTreeMap<&'a str, Vec<&'a Triple>>,
    all: Vec<&'a Triple>,
}

impl<'a> PredicateIndex<'a> {
    fn build(facts: &'a BTreeSet<Triple>) -> Self {
        let mut by_predicate: BTreeMap<&str, Vec<&Triple>> = BTreeMap::new();
        for f in facts {
            by_predicate.entry(f.predicate.as_str()).or_default().push(f);
        }
        PredicateIndex { by_predicate, all: facts.iter().collect() }
    }

    fn candidates(&self, pattern: &TriplePattern, b: &Bindings) -> &[&'a Triple] {
        let key = match &pattern.predicate {
            Term::Const(c) => Some(c.as_str()),
            Term::Var(v) => b.get(v).map(String::as_str),
        };
        match key {
            Some(p) => self.by_predicate.get(p).map_or(&[], Vec::as_slice),
            None => &self.all,
        }
    }
}

fn join(
    patterns: &[TriplePattern],
    at: usize,
    pivot: usize,
    all: &PredicateIndex<'_>,
    delta: &PredicateIndex<'_>,
    b: &Bindings,
    sink: &mut dyn FnMut(&Bindings),
) {
    let Some(pattern) = patterns.get(at) else {
        sink(b);
        return;
    };
    let source = if at == pivot { delta } else { all };
    for fact in source.candidates(pattern, b) {
        if let Some(next) = pattern.unify(fact, b) {
            join(patterns, at + 1, pivot, all, delta, &next, sink);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preference {
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub preferences: Vec<Preference>,
    /// Output channel → suitability in [0, 1].
    pub output_channels: BTreeMap<String, f64>,
}

impl UserProfile {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.user_id.is_empty() {
            return Err(KnowledgeError::EmptyTerm);
        }
        for (channel, &value) in &self.output_channels {
            if !(0.0..=1.0).contains(&value) {
                return Err(KnowledgeError::BadSuitability { channel: channel.clone(), value });
            }
        }
        for t in self.preference_triples() {
            t.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let p: UserProfile = serde_json::from_str(text).map_err(|e| KnowledgeError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Preferences as facts about the user.
    pub fn preference_triples(&self) -> Vec<Triple> {
        self.preferences
            .iter()
            .map(|p| Triple::new(self.user_id.clone(), p.predicate.clone(), p.object.clone()))
            .collect()
    }
}

/// `{R: 1.25}` for every fact `(user_id, boost_rule, R)`.
pub fn boosts_for(store: &KnowledgeStore, user_id: &str) -> Boosts {
    Boosts(
        store
            .facts
            .iter()
            .filter(|t| t.subject == user_id && t.predicate == BOOST_PREDICATE)
            .map(|t| (t.object.clone(), BOOST_MULTIPLIER))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(id: &str, ifs: &[[&str; 3]], thens: &[[&str; 3]]) -> HornRule {
        HornRule {
            rule_id: id.into(),
            if_patterns: ifs.iter().map(|[s, p, o]| TriplePattern::new(*s, *p, *o)).collect(),
            then_templates: thens.iter().map(|[s, p, o]| TriplePattern::new(*s, *p, *o)).collect(),
        }
    }

    #[test]
    fn set_semantics() {
        let mut s = KnowledgeStore::new();
        let t = Triple::new("u1", "prefers", "visual");
        assert_eq!(s.assert_facts([t.clone()]).unwrap(), 1);
        assert_eq!(s.assert_facts([t]).unwrap(), 0);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn query_binds_variables() {
        let s = KnowledgeStore::from_facts([Triple::new("u1", "prefers", "visual")]).unwrap();
        let b = s.query(&TriplePattern::new("?s", "prefers", "?o"));
        assert_eq!(b.len(), 1);
        assert_eq!(b[0]["s"], "u1");
        assert_eq!(b[0]["o"], "visual");
        assert!(s.query(&TriplePattern::new("?s", "hates", "?o")).is_empty());
    }

    #[test]
    fn empty_term_is_refused_atomically() {
        let mut s = KnowledgeStore::new();
        let err = s.assert_facts([Triple::new("a", "b", "c"), Triple::new("u1", "", "x")]).unwrap_err();
        assert_eq!(err, KnowledgeError::EmptyTerm);
        assert!(s.is_empty());
    }

    #[test]
    fn no_rules_is_identity() {
        let s = KnowledgeStore::from_facts([Triple::new("a", "b", "c")]).unwrap();
        assert_eq!(s.infer(&[]).unwrap(), s);
    }

    #[test]
    fn single_application() {
        let s = KnowledgeStore::from_facts([Triple::new("u1", "prefers", "visual")]).unwrap();
        let r = rule("r1", &[["?u", "prefers", "visual"]], &[["?u", "boost_act", "SHOW"]]);
        let closed = s.infer(&[r]).unwrap();
        assert!(closed.contains(&Triple::new("u1", "boost_act", "SHOW")));
        assert_eq!(closed.len(), 2);
    }

    #[test]
    fn transitive_chain() {
        let s = KnowledgeStore::from_facts([
            Triple::new("a", "sub", "b"),
            Triple::new("b", "sub", "c"),
            Triple::new("c", "sub", "d"),
        ])
        .unwrap();
        let r = rule("trans", &[["?x", "sub", "?y"], ["?y", "sub", "?z"]], &[["?x", "sub", "?z"]]);
        let closed = s.infer(&[r]).unwrap();
        assert_eq!(closed.len(), 6);
        assert!(closed.contains(&Triple::new("a", "sub", "d")));
    }

    #[test]
    fn range_restriction_enforced() {
        let r = rule("bad", &[["?u", "p", "o"]], &[["?u", "q", "?v"]]);
        assert!(matches!(KnowledgeStore::new().infer(&[r]), Err(KnowledgeError::NotRangeRestricted { .. })));
    }

    #[test]
    fn bodiless_rule_asserts_constants() {
        let r = rule("axiom", &[], &[["sys", "ready", "yes"]]);
        let closed = KnowledgeStore::new().infer(&[r]).unwrap();
        assert!(closed.contains(&Triple::new("sys", "ready", "yes")));
    }

    #[test]
    fn boosts() {
        assert!(boosts_for(&KnowledgeStore::new(), "u1").0.is_empty());
        let s = KnowledgeStore::from_facts([
            Triple::new("u1", "boost_rule", "PUT_THERE"),
            Triple::new("u2", "boost_rule", "DELETE"),
        ])
        .unwrap();
        let b = boosts_for(&s, "u1");
        assert_eq!(b.get("PUT_THERE"), 1.25);
        assert_eq!(b.get("DELETE"), 1.0);
        assert_eq!(boosts_for(&s, "nobody").get("PUT_THERE"), 1.0);
    }

    #[test]
    fn rule_document_format() {
        let rules =
            parse_rules(r#"[{"rule_id":"r1","if":[["?u","prefers","visual"]],"then":[["?u","boost_rule","SHOW"]]}]"#)
                .unwrap();
        assert_eq!(rules[0].if_patterns[0].subject, Term::Var("u".into()));
    }
}
