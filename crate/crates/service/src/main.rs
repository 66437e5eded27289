use std::io;
use std::process::ExitCode;

use clap::Parser;
use emo20q_service::cli::{self, Cli, Command, KbCommand};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(io::stderr)
        .init();

    let args = Cli::parse();
    let result = match args.command {
        Command::Play(a) => {
            let kb = match a.kb.as_deref().map(emo20q_core::kb::load_kb).transpose() {
                Ok(kb) => kb.unwrap_or_else(emo20q_core::kb::seed_kb),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            cli::play(kb, a.role, a.seed, io::stdin().lock(), io::stdout().lock()).map(|_| 0)
        }
        Command::Selfplay(a) => cli::selfplay(&a, io::stdout().lock()),
        Command::Kb { command } => match command {
            KbCommand::Validate { path } => cli::kb_validate(&path, io::stdout().lock()),
            KbCommand::Stats { path, json } => cli::kb_stats(&path, json, io::stdout().lock()),
        },
        Command::Serve(a) => cli::serve(a).await.map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
