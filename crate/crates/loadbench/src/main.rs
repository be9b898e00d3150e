use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use cahicha_core::engine::Mode;
use cahicha_loadbench::{
    emit_report, read_pem_roots, run, BenchReport, BenchScenario, LocalDeployment, LocalOptions, OriginStub,
    ScenarioKind, Trust,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "loadbench", version, about = "Load and flood benchmarks for the cahicha gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verified users: ceremony once, then browse with the session cookie.
    Verified {
        #[arg(long, default_value_t = 6)]
        users: u64,
        /// Hold window in seconds (ramp-up and ramp-down come on top).
        #[arg(long, default_value_t = 60)]
        duration: u64,
        /// Users started per second.
        #[arg(long, default_value_t = 1.0)]
        spawn_rate: f64,
        #[arg(long, default_value_t = 500)]
        think_min_ms: u64,
        #[arg(long, default_value_t = 1000)]
        think_max_ms: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Cookie-less HTTP flood with one verified canary client alongside.
    Flood {
        #[arg(long, default_value_t = 64)]
        threads: u64,
        #[arg(long, default_value_t = 30)]
        duration: u64,
        /// Verified clients running during the flood.
        #[arg(long, default_value_t = 1)]
        canaries: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run only the instrumented origin stub.
    Stub {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    General,
}

#[derive(Args)]
struct Common {
    /// Gateway URL, e.g. https://localhost:8443/
    #[arg(long, required_unless_present = "local")]
    target: Option<String>,
    /// Write the report here; .json or .csv.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Start an origin stub on this port and count arrivals there. Point
    /// the gateway's upstream at it.
    #[arg(long)]
    origin_stub_port: Option<u16>,
    /// PEM file with the CA that issued the gateway's TLS certificate.
    #[arg(long)]
    ca: Option<PathBuf>,
    /// Start a gateway and origin stub in-process and bench against them.
    #[arg(long, conflicts_with_all = ["target", "origin_stub_port", "ca"])]
    local: bool,
    /// Gateway mode for --local.
    #[arg(long, value_enum, default_value = "general", requires = "local")]
    mode: ModeArg,
    /// Seed of the fixture PKI the soft authenticators attest with; must
    /// match the gateway's fixture MDS blob in strict mode.
    #[arg(long, default_value_t = cahicha_loadbench::local::DEFAULT_FIXTURE_SEED)]
    fixture_seed: u64,
    #[arg(long, default_value = "/")]
    path: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mut scenario, common) = match cli.command {
        Command::Stub { port } => return run_stub(port).await,
        Command::Verified { users, duration, spawn_rate, think_min_ms, think_max_ms, common } => {
            let mut s = BenchScenario::new(ScenarioKind::VerifiedLoad, "");
            s.users = users;
            s.duration = Duration::from_secs(duration);
            s.spawn_rate = spawn_rate;
            s.think_time = (Duration::from_millis(think_min_ms), Duration::from_millis(think_max_ms));
            (s, common)
        }
        Command::Flood { threads, duration, canaries, common } => {
            let kind = if canaries > 1 { ScenarioKind::Mixed } else { ScenarioKind::BotFlood };
            let mut s = BenchScenario::new(kind, "");
            s.flood_threads = threads;
            s.users = canaries;
            s.duration = Duration::from_secs(duration);
            (s, common)
        }
    };
    scenario.path = common.path.clone();
    scenario.seed = common.seed;
    scenario.fixture_seed = common.fixture_seed;

    match bench(scenario, &common).await {
        Ok(report) => finish(&report, common.report.as_deref()),
        Err(e) => {
            eprintln!("loadbench: {e}");
            ExitCode::FAILURE
        }
    }
}

async fn bench(mut scenario: BenchScenario, common: &Common) -> Result<BenchReport, Box<dyn std::error::Error>> {
    if common.local {
        let mode = match common.mode {
            ModeArg::Strict => Mode::Strict,
            ModeArg::General => Mode::General,
        };
        let options = LocalOptions { mode, fixture_seed: common.fixture_seed, ..Default::default() };
        let local = LocalDeployment::start(options).await?;
        scenario.target_url = local.target_url();
        scenario.trust = local.trust.clone();
        eprintln!("local gateway at {} (origin stub {})", scenario.target_url, local.stub.addr);
        let report = run(&scenario, Some(&local.stub.counters)).await;
        local.shutdown().await;
        return Ok(report?);
    }

    scenario.target_url = common.target.clone().unwrap_or_default();
    if let Some(ca) = &common.ca {
        scenario.trust = Trust { roots: read_pem_roots(ca)? };
    }
    let stub = match common.origin_stub_port {
        Some(port) => Some(OriginStub::start(SocketAddr::from(([127, 0, 0, 1], port))).await?),
        None => None,
    };
    Ok(run(&scenario, stub.as_ref().map(|s| &*s.counters)).await?)
}

fn finish(report: &BenchReport, path: Option<&std::path::Path>) -> ExitCode {
    eprintln!(
        "{}: {} requests, {} failed, {} forwarded to origin ({}), {} blocked, p50 {:.2} ms, steady {:.2} req/s",
        report.scenario,
        report.requests_total,
        report.failures_total,
        report.forwarded_to_origin,
        report.forwarded_source,
        report.blocked_at_gateway,
        report.latency_p50_ms,
        report.steady_state.throughput_rps,
    );
    if let Some(canary) = &report.canary {
        eprintln!("canary: {} requests, {} failed, p50 {:.2} ms", canary.requests, canary.failures, canary.p50_ms);
    }
    let written = match path {
        Some(path) => emit_report(report, path),
        None => report.check_identity().map(|_| {
            println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
        }),
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loadbench: {e}");
            ExitCode::FAILURE
        }
    }
}

async fn run_stub(port: u16) -> ExitCode {
    match OriginStub::start(SocketAddr::from(([127, 0, 0, 1], port))).await {
        Ok(stub) => {
            eprintln!("origin stub listening on {}", stub.addr);
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("arrivals: {}", stub.counters.total());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("loadbench: {e}");
            ExitCode::FAILURE
        }
    }
}
