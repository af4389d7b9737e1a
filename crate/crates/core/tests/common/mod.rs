#![allow(dead_code)]

pub mod gen;
pub mod oracle;

use std::path::PathBuf;

use mis_core::harness::{Inputs, Scenario};
use mis_core::interpretation::load_grammar;
use mis_core::knowledge::{parse_rules, UserProfile};
use mis_core::recognition::Lexicon;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bolt").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn bolt_inputs() -> Inputs {
    Inputs {
        grammar: load_grammar(&fixture("grammar.json")).unwrap(),
        lexicon: Lexicon::from_json(&fixture("lexicon.json")).unwrap(),
        profile: UserProfile::from_json(&fixture("profile.json")).unwrap(),
        rules: parse_rules(&fixture("rules.json")).unwrap(),
    }
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::parse(&fixture(name)).unwrap()
}
