//! `mis`: replay scenarios through the mesh, serve a gateway over TCP and
//! inspect a running registry.

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mis_core::codec::Body;
use mis_core::fission::FissionConfig;
use mis_core::fusion::FusionConfig;
use mis_core::harness::{
    boot_mesh, run_scenario, GatewayNode, HarnessError, Inputs, RunConfig, Scenario, TransportKind, OP_CLOCK,
};
use mis_core::interpretation::load_grammar;
use mis_core::knowledge::{parse_rules, UserProfile};
use mis_core::mesh::{Client, GATEWAY_ID};
use mis_core::recognition::Lexicon;
use mis_core::registry::RegistryQuery;
use mis_core::transport::{serve, TcpTransport};
use mis_core::{ServiceDescriptor, Timestamp};

const EXIT_FAILURES: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "mis", version, about = "Multimodal interaction service mesh")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a scenario file and write the run report.
    Run(RunArgs),
    /// Serve a gateway and its mesh on a TCP port.
    Serve(ServeArgs),
    /// Inspect the registry of a running server.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// List live service descriptors.
    Ls {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fusion proximity window in milliseconds.
    #[arg(long)]
    fusion_delta: Option<u64>,
    /// Suitability slack for redundant output acts.
    #[arg(long, allow_negative_numbers = true)]
    fission_epsilon: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[command(flatten)]
    mesh: MeshArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Transport::Inproc)]
    transport: Transport,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Extra recognizer channels beyond those in the lexicon.
    #[arg(long, value_delimiter = ',')]
    channels: Vec<String>,
    #[arg(long, default_value = "serve")]
    name: String,
    #[command(flatten)]
    mesh: MeshArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Inproc,
    Tcp,
}

struct Exit {
    code: u8,
    message: String,
}

impl Exit {
    fn config(message: impl std::fmt::Display) -> Self {
        Exit { code: EXIT_CONFIG, message: message.to_string() }
    }

    fn failed(message: impl std::fmt::Display) -> Self {
        Exit { code: EXIT_FAILURES, message: message.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Serve(args) => serve_gateway(args),
        Command::Registry { command: RegistryCommand::Ls { port, host } } => registry_ls(&host, port),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mis: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Exit> {
    fs::read_to_string(path).map_err(|e| Exit::config(format!("{}: {e}", path.display())))
}

fn load_inputs(args: &MeshArgs) -> Result<Inputs, Exit> {
    let at = |path: &Path, e: &dyn std::fmt::Display| Exit::config(format!("{}: {e}", path.display()));
    Ok(Inputs {
        grammar: load_grammar(&read(&args.grammar)?).map_err(|e| at(&args.grammar, &e))?,
        lexicon: Lexicon::from_json(&read(&args.lexicon)?).map_err(|e| at(&args.lexicon, &e))?,
        profile: UserProfile::from_json(&read(&args.profile)?).map_err(|e| at(&args.profile, &e))?,
        rules: parse_rules(&read(&args.rules)?).map_err(|e| at(&args.rules, &e))?,
    })
}

fn run_config(args: &MeshArgs, transport: TransportKind) -> Result<RunConfig, Exit> {
    let mut cfg = RunConfig { transport, ..RunConfig::default() };
    if let Some(delta_ms) = args.fusion_delta {
        cfg.fusion = FusionConfig { delta_ms };
    }
    if let Some(epsilon_red) = args.fission_epsilon {
        cfg.fission = FissionConfig { epsilon_red };
    }
    cfg.validate().map_err(Exit::config)?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<u8, Exit> {
    let inputs = load_inputs(&args.mesh)?;
    let transport = match args.transport {
        Transport::Inproc => TransportKind::Inproc,
        Transport::Tcp => TransportKind::Tcp,
    };
    let cfg = run_config(&args.mesh, transport)?;
    let text =
        fs::read_to_string(&args.scenario).map_err(|e| Exit::failed(format!("{}: {e}", args.scenario.display())))?;
    let scenario = Scenario::parse(&text).map_err(Exit::failed)?;
    let report = run_scenario(&scenario, &inputs, &cfg, args.mesh.seed).map_err(|e| match e {
        HarnessError::ConfigInvalid(_) => Exit::config(e),
        e => Exit::failed(e),
    })?;
    let mut bytes = report.to_canonical();
    bytes.push(b'\n');
    match &args.report {
        Some(path) => fs::write(path, &bytes).map_err(|e| Exit::failed(format!("{}: {e}", path.display())))?,
        None => std::io::stdout().write_all(&bytes).map_err(Exit::failed)?,
    }
    Ok(if report.has_failures() { EXIT_FAILURES } else { 0 })
}

fn serve_gateway(args: ServeArgs) -> Result<u8, Exit> {
    let inputs = load_inputs(&args.mesh)?;
    let cfg = run_config(&args.mesh, TransportKind::Tcp)?;
    let mesh = Arc::new(boot_mesh(&inputs, &cfg).map_err(Exit::config)?);
    let node =
        GatewayNode::boot(mesh, &inputs, cfg, &args.channels, args.name, args.mesh.seed).map_err(Exit::failed)?;
    let listener = TcpListener::bind((args.host.as_str(), args.port))
        .map_err(|e| Exit::config(format!("bind {}:{}: {e}", args.host, args.port)))?;
    let server = serve(listener, Arc::new(node)).map_err(Exit::failed)?;
    eprintln!("mis: listening on {}", server.addr());
    server.join();
    Ok(0)
}

fn registry_ls(host: &str, port: u16) -> Result<u8, Exit> {
    let transport =
        TcpTransport::connect((host, port)).map_err(|e| Exit::failed(format!("connect {host}:{port}: {e}")))?;
    let mut client = Client::new(transport, "mis-cli");
    let clock = client.call(GATEWAY_ID, "", OP_CLOCK, Body::new()).map_err(Exit::failed)?;
    let now: Timestamp = clock.get("now").map_err(Exit::failed)?;
    let mut live = client.find(&RegistryQuery::all(), now).map_err(Exit::failed)?;
    live.sort_by(|a, b| a.service_id.cmp(&b.service_id));
    print!("{}", table(&live));
    Ok(0)
}

fn table(rows: &[ServiceDescriptor]) -> String {
    let header = ["SERVICE_ID", "KIND", "MODALITY", "LAYER", "PARENT", "ENDPOINT", "LEASE_EXPIRY"].map(String::from);
    let mut cells = vec![header];
    for d in rows {
        cells.push([
            d.service_id.clone(),
            d.kind.to_string(),
            d.modality.clone().unwrap_or_else(|| "-".into()),
            d.layer.to_string(),
            d.parent_id.clone().unwrap_or_else(|| "-".into()),
            d.endpoint.clone(),
            d.lease_expiry.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..7).map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mis_core::ServiceKind;

    #[test]
    fn table_aligns_columns_and_marks_absent_fields() {
        let mut gw = ServiceDescriptor::new("iocm", ServiceKind::Gateway, None, "tcp://h:1");
        gw.lease_expiry = Timestamp(30_000);
        let rs =
            ServiceDescriptor::new("rs-speech", ServiceKind::Recognizer, Some("iocm"), "e").with_modality("speech");
        let t = table(&[gw, rs]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].find("GATEWAY"), lines[0].find("KIND"));
        assert_eq!(lines[2].rfind("speech"), lines[0].find("MODALITY"));
        assert!(lines[1].contains(" -  ") && lines[1].ends_with("30000ms"));
    }
}
