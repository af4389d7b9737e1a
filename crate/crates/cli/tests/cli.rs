use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bolt").join(name).display().to_string()
}

fn inputs() -> Vec<String> {
    ["grammar", "lexicon", "profile", "rules"]
        .iter()
        .flat_map(|k| [format!("--{k}"), fixture(&format!("{k}.json"))])
        .collect()
}

fn mis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mis")).args(args).output().unwrap()
}

fn run(scenario: &str, extra: &[&str]) -> Output {
    let inputs = inputs();
    let mut args: Vec<&str> = vec!["run", scenario];
    args.extend(inputs.iter().map(String::as_str));
    args.extend(extra);
    mis(&args)
}

#[test]
fn successful_run_exits_zero_with_canonical_report() {
    let out = run(&fixture("put_that_there.jsonl"), &["--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("{\"registry_log\":"));
    assert!(text.contains("\"seed\":7"));
    assert!(text.contains("PUT_THERE(loc=300,210,obj=120,45)"));
}

#[test]
fn failed_turn_exits_one_and_transports_agree() {
    let dir = std::env::temp_dir().join(format!("mis-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let a = dir.join("inproc.json");
    let b = dir.join("tcp.json");
    let out = run(&fixture("mixed.jsonl"), &["--report", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let out = run(&fixture("mixed.jsonl"), &["--report", b.to_str().unwrap(), "--transport", "tcp"]);
    assert_eq!(out.status.code(), Some(1));
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().contains("NO_TOKENS"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn configuration_errors_exit_two() {
    let scenario = fixture("put_that_there.jsonl");
    for extra in [&["--fission-epsilon", "-1"][..], &["--transport", "carrier-pigeon"], &["--seed", "x"]] {
        assert_eq!(run(&scenario, extra).status.code(), Some(2), "{extra:?}");
    }
    let out = mis(&[
        "run",
        &scenario,
        "--grammar",
        "/nonexistent",
        "--lexicon",
        &fixture("lexicon.json"),
        "--profile",
        &fixture("profile.json"),
        "--rules",
        &fixture("rules.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent"));
    let out = mis(&[
        "run",
        &scenario,
        "--grammar",
        &fixture("lexicon.json"),
        "--lexicon",
        &fixture("lexicon.json"),
        "--profile",
        &fixture("profile.json"),
        "--rules",
        &fixture("rules.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_scenario_exits_one() {
    let path = std::env::temp_dir().join(format!("mis-bad-{}.jsonl", std::process::id()));
    std::fs::write(&path, "{\"session_id\":\"s\"}\nnot json\n").unwrap();
    let out = run(path.to_str().unwrap(), &[]);
    std::fs::remove_file(&path).unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SCENARIO_PARSE at line 1"));
}

#[test]
fn registry_ls_lists_live_services_sorted() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port().to_string();
    let inputs = inputs();
    let mut args = vec!["serve", "--port", &port];
    args.extend(inputs.iter().map(String::as_str));
    let mut server = Command::new(env!("CARGO_BIN_EXE_mis")).args(&args).stderr(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(server.stderr.take().unwrap()).read_line(&mut line).unwrap();
    assert!(line.contains("listening on"), "{line}");

    let out = mis(&["registry", "ls", "--port", &port]);
    server.kill().unwrap();
    server.wait().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(ids, ["bs", "fis", "fus", "iocm", "is", "kb", "rs-gesture", "rs-speech"]);
    assert!(text.lines().next().unwrap().starts_with("SERVICE_ID"));
}

#[test]
fn registry_ls_without_server_fails() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port().to_string();
    assert_eq!(mis(&["registry", "ls", "--port", &port]).status.code(), Some(1));
}
