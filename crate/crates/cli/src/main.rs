use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::Parser;
use sacti_cli::commands::{prepare_serve, run, Cli, Command, ServeArgs};
use sacti_cli::service::{router, ServiceState, BIND_ENV, DEFAULT_BIND};
use sacti_cli::CliError;
use serde_json::json;

fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let prepared = prepare_serve(args)?;
    let addr = std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io(&prepared.journal, e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Usage(e.to_string()))?;
        println!(
            "{}",
            json!({"status": "listening", "addr": local.to_string(), "checkpoint_loaded": prepared.model.is_some()})
        );
        let state = Arc::new(ServiceState::new(prepared.model, prepared.config, prepared.store));
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Usage(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.render().to_string();
            let first = detail.lines().next().unwrap_or(&message).trim_start_matches("error: ");
            eprintln!("{}", json!({"error": {"kind": "usage", "message": first}}));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Serve(args) => serve(args).map(|_| None),
        other => run(other).map(Some),
    };
    match result {
        Ok(Some(summary)) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code())
        }
    }
}
