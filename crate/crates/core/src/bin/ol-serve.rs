// SPDX-License-Identifier: Apache-2.0

//! Runs the live WebSocket server.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use omnilive::backends::Backends;
use omnilive::config::{load_config, split_override_args};
use omnilive::gateway::{serve, ServerState};

/// Config overrides may be passed as `--section.key=value`, for example
/// `--gateway.bind=0.0.0.0:8765`.
#[derive(Parser, Debug)]
#[command(name = "ol-serve", version, about = "Streaming perception, memory and reasoning server")]
struct Args {
    /// TOML config file; defaults to $OL_CONFIG, then built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

async fn run() -> Result<(), String> {
    let (rest, overrides) = split_override_args(std::env::args());
    let args = Args::parse_from(rest);
    let cfg = load_config(args.config.as_deref(), &overrides).map_err(|e| e.to_string())?;
    if args.print_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let backends = Backends::from_config(&cfg, None).map_err(|e| e.to_string())?;
    let listener = tokio::net::TcpListener::bind(&cfg.gateway.bind)
        .await
        .map_err(|e| format!("bind {}: {e}", cfg.gateway.bind))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    tracing::info!("listening on ws://{addr}{} (health: http://{addr}/healthz)", cfg.gateway.ws_path);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
    };
    serve(listener, ServerState::new(cfg, backends), shutdown)
        .await
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("ol-serve: {e}");
            return ExitCode::from(2);
        }
    };
    match rt.block_on(run()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ol-serve: {e}");
            ExitCode::from(2)
        }
    }
}
