//! Network service and command-line tools for the emo20q dialog agent.
//!
//! - [`protocol`]: the JSON message format used on `/ws`.
//! - [`transcript`]: per-session JSONL transcripts and replay checks.
//! - [`server`]: the axum application and session handling.
//! - [`cli`]: the `emo20q` command.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod transcript;
