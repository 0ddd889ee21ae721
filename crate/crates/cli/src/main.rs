use std::process::ExitCode;

use clap::Parser;
use t2s_cli::{dispatch, Cli};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let command = format!("{:?}", cli.command).split('(').next().unwrap_or_default().to_lowercase();
    match dispatch(cli, None) {
        Ok(manifest) => {
            println!("{}", serde_json::to_string(&manifest.counts).expect("counts serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let err = serde_json::json!({ "command": command, "error": format!("{e:#}") });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
