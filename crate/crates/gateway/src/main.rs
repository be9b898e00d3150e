use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use cahicha_core::engine::Mode;
use cahicha_gateway::{load_tls, write_dev_fixtures, Gateway, GatewayConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cahicha-gateway", version, about = "Hardware-presence gate in front of an HTTP origin")]
struct Cli {
    /// TOML config file. CAHICHA_* environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// host:port to listen on.
    #[arg(long)]
    listen: Option<String>,
    /// Origin server, e.g. 127.0.0.1:8080.
    #[arg(long)]
    upstream: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Serve plain HTTP on a loopback address (development only).
    #[arg(long)]
    unsafe_no_tls: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    General,
}

#[derive(Subcommand)]
enum Command {
    /// Write a localhost TLS identity and fixture MDS files for development.
    DevFixtures {
        #[arg(long, default_value = "dev-fixtures")]
        out: PathBuf,
        #[arg(long, default_value = "localhost")]
        host: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the effective configuration and exit.
    CheckConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    if let Some(Command::DevFixtures { out, host, seed }) = &cli.command {
        return match write_dev_fixtures(out, host, *seed) {
            Ok(paths) => {
                for path in paths {
                    println!("{}", path.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }

    let mut config = match GatewayConfig::load(cli.config.as_deref(), std::env::vars()) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(listen) = cli.listen {
        config.listen_address = listen;
    }
    if let Some(upstream) = cli.upstream {
        config.upstream_origin = upstream;
    }
    if let Some(mode) = cli.mode {
        config.mode = match mode {
            ModeArg::Strict => Mode::Strict,
            ModeArg::General => Mode::General,
        };
    }
    if cli.unsafe_no_tls {
        config.unsafe_no_tls = true;
    }
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    if matches!(cli.command, Some(Command::CheckConfig)) {
        println!("{config:#?}");
        return ExitCode::SUCCESS;
    }

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    runtime.block_on(async move {
        let tls = match (&config.tls_cert_path, &config.tls_key_path, config.unsafe_no_tls) {
            (_, _, true) => None,
            (Some(cert), Some(key), false) => match load_tls(cert, key) {
                Ok(acceptor) => Some(acceptor),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            },
            _ => unreachable!("validated above"),
        };
        let gateway = match Gateway::from_config(config) {
            Ok(gateway) => Arc::new(gateway),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        };
        let running = match cahicha_gateway::spawn(gateway, tls).await {
            Ok(running) => running,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        };
        let c = running.gateway.config();
        log::info!(
            "listening on {} ({}), mode {}, forwarding to {}",
            running.local_addr,
            if c.tls_enabled() { "https" } else { "http, unsafe-no-tls" },
            c.mode,
            c.upstream_origin
        );
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
        running.shutdown().await;
        ExitCode::SUCCESS
    })
}
