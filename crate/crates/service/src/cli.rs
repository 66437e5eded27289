//! Command-line front end.

use std::io::{BufRead, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use emo20q_core::dialog::{new_machine, DialogConfig, DialogContext, DialogEvent, PhaseOrder};
use emo20q_core::kb::{load_kb, seed_kb};
use emo20q_core::selfplay::run_selfplay;
use emo20q_core::QaKnowledgeBase;

use crate::server::{self, AppState, ServerOptions};
use crate::transcript::TranscriptStore;

#[derive(Debug, Parser)]
#[command(
    name = "emo20q",
    version,
    about = "Emotion twenty questions: play, evaluate and serve"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play in the terminal.
    Play(PlayArgs),
    /// Run agent-vs-agent games and report the win rate.
    Selfplay(SelfPlayArgs),
    /// Inspect knowledge-base files.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Run the chat service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    /// The agent asks, you answer.
    Asker,
    /// You ask, the agent answers.
    Answerer,
    /// Agent asks first, then answers.
    Both,
}

impl Role {
    pub fn phase_order(self) -> PhaseOrder {
        match self {
            Role::Asker => PhaseOrder::AskerOnly,
            Role::Answerer => PhaseOrder::AnswererOnly,
            Role::Both => PhaseOrder::AskerFirst,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    /// Which role the agent plays.
    #[arg(long, value_enum, default_value_t = Role::Both)]
    pub role: Role,
    /// Knowledge base file; the bundled seed KB when omitted.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelfPlayArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub games: u32,
    /// Probability that an answer is replaced by a different category.
    #[arg(long, default_value_t = 0.0, value_parser = parse_probability)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Check every KB invariant; exits 1 on the first violation.
    Validate { path: PathBuf },
    /// Print sizes, totals and per-question answer marginals.
    Stats {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "EMO20Q_HOST", default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, env = "EMO20Q_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "EMO20Q_KB")]
    pub kb: Option<PathBuf>,
    /// Where session transcripts are written; none are kept when omitted.
    #[arg(long, env = "EMO20Q_TRANSCRIPTS_DIR")]
    pub transcripts_dir: Option<PathBuf>,
    #[arg(long, env = "EMO20Q_IDLE_TIMEOUT_SECS", default_value_t = 120)]
    pub idle_timeout_secs: u64,
    /// Seeds every session; random when omitted.
    #[arg(long, env = "EMO20Q_MASTER_SEED")]
    pub master_seed: Option<u64>,
    #[arg(long, env = "EMO20Q_PHASE_ORDER", default_value = "asker-first")]
    pub phase_order: PhaseOrder,
    /// Directory of web client assets served at `/`.
    #[arg(long, env = "EMO20Q_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

pub fn parse_probability(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} is not in [0, 1]"))
    }
}

fn kb_or_default(path: Option<&Path>) -> anyhow::Result<QaKnowledgeBase> {
    match path {
        Some(p) => load_kb(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(seed_kb()),
    }
}

/// Reads one line per turn from `input` until the game ends or input runs out.
pub fn play<R: BufRead, W: Write>(
    kb: QaKnowledgeBase,
    role: Role,
    seed: u64,
    input: R,
    mut output: W,
) -> anyhow::Result<()> {
    let config = DialogConfig {
        phase_order: role.phase_order(),
        ..DialogConfig::default()
    };
    let mut machine = new_machine(Arc::new(kb), seed, config);
    let mut lines = input.lines();
    let mut event = DialogEvent::SessionStart;
    loop {
        let (next, out) = match machine.step(&event) {
            Ok(r) => r,
            Err(e) => {
                writeln!(output, "! {e}")?;
                (machine.clone(), Vec::new())
            }
        };
        machine = next;
        for line in out {
            writeln!(output, "agent> {line}")?;
        }
        if machine.is_over() {
            return Ok(());
        }
        write!(output, "you> ")?;
        output.flush()?;
        event = match lines.next() {
            Some(line) => DialogEvent::UserUtterance(line?),
            None => {
                writeln!(output)?;
                machine.step(&DialogEvent::SessionEnd)?;
                return Ok(());
            }
        };
    }
}

/// Exit code 0 when `path` holds a valid KB, 1 otherwise.
pub fn kb_validate<W: Write>(path: &Path, mut out: W) -> anyhow::Result<i32> {
    match load_kb(path) {
        Ok(kb) => {
            writeln!(
                out,
                "ok: {} emotions, {} questions",
                kb.lexicon().len(),
                kb.questions().len()
            )?;
            Ok(0)
        }
        Err(e) => {
            writeln!(out, "error: {e}")?;
            Ok(1)
        }
    }
}

pub fn kb_stats<W: Write>(path: &Path, json: bool, mut out: W) -> anyhow::Result<i32> {
    let kb = match load_kb(path) {
        Ok(kb) => kb,
        Err(e) => {
            writeln!(out, "error: {e}")?;
            return Ok(1);
        }
    };
    let stats = kb.stats();
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?;
        return Ok(0);
    }
    writeln!(out, "version         {}", stats.version)?;
    writeln!(out, "alpha           {}", stats.alpha)?;
    writeln!(out, "emotions        {}", stats.emotions)?;
    writeln!(out, "questions       {}", stats.questions)?;
    writeln!(out, "total count     {}", stats.total_count)?;
    writeln!(out, "uncovered pairs {}", stats.uncovered_pairs)?;
    let width = stats.per_question.iter().map(|q| q.id.len()).max().unwrap_or(8).max(8);
    writeln!(
        out,
        "\n{:<width$}  {:>6}  {:>6}  {:>6}",
        "question", "yes", "no", "other"
    )?;
    for q in &stats.per_question {
        writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}", q.id, q.yes, q.no, q.other)?;
    }
    Ok(0)
}

pub fn selfplay<W: Write>(args: &SelfPlayArgs, mut out: W) -> anyhow::Result<i32> {
    let kb = kb_or_default(args.kb.as_deref())?;
    let report = run_selfplay(&kb, args.games, args.noise, args.seed)?;
    if args.json {
        writeln!(out, "{}", report.to_json())?;
    } else {
        write!(out, "{}", report.to_table())?;
    }
    Ok(0)
}

pub async fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let kb = kb_or_default(args.kb.as_deref())?;
    let master_seed = args.master_seed.unwrap_or_else(rand::random);
    tracing::info!(master_seed, phase_order = %args.phase_order, "starting");
    let config = DialogConfig {
        phase_order: args.phase_order,
        ..DialogConfig::default()
    };
    let ctx = Arc::new(DialogContext::new(Arc::new(kb), config));
    let store = TranscriptStore::new(args.transcripts_dir).context("creating transcripts directory")?;
    let options = ServerOptions {
        master_seed,
        idle_timeout: Duration::from_secs(args.idle_timeout_secs.max(1)),
        static_dir: args.static_dir,
        ..ServerOptions::default()
    };
    server::serve(
        AppState::new(ctx, store, options),
        SocketAddr::new(args.host, args.port),
    )
    .await
}
