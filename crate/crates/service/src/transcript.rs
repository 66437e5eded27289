//! Per-session JSONL transcripts.
//!
//! Each session writes `<session_id>.jsonl`: a header line with everything
//! needed to replay the session, then one [`TranscriptLine`] per input event
//! and per agent utterance. Lines carry no user identity or network data.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use emo20q_core::dialog::{replay, DialogConfig, DialogEvent, PhaseOrder};
use emo20q_core::QaKnowledgeBase;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::format_ts;

pub const HEADER_KEYS: [&str; 5] = ["session_id", "seed", "kb_version", "phase_order", "started_at"];
pub const LINE_KEYS: [&str; 7] = ["ts", "session_id", "direction", "type", "text", "turn", "phase"];

/// Line types for input events that have no wire message of their own.
pub const TIMEOUT: &str = "timeout";
pub const SESSION_END: &str = "session.end";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    User,
    Agent,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptHeader {
    pub session_id: String,
    pub seed: u64,
    pub kb_version: u32,
    pub phase_order: PhaseOrder,
    pub started_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptLine {
    pub ts: String,
    pub session_id: String,
    pub direction: Direction,
    #[serde(rename = "type")]
    pub kind: String,
    pub text: String,
    /// Index of the input event this line belongs to.
    pub turn: u64,
    pub phase: String,
}

impl TranscriptLine {
    pub fn new(session_id: &str, direction: Direction, kind: &str, text: &str, turn: u64, phase: &str) -> Self {
        Self {
            ts: format_ts(&Utc::now()),
            session_id: session_id.to_string(),
            direction,
            kind: kind.to_string(),
            text: text.to_string(),
            turn,
            phase: phase.to_string(),
        }
    }

    /// Line recording an input event.
    pub fn for_event(session_id: &str, event: &DialogEvent, turn: u64, phase: &str) -> Self {
        let (direction, kind, text) = match event {
            DialogEvent::SessionStart => (Direction::System, "session.start", ""),
            DialogEvent::UserUtterance(t) => (Direction::User, "user.utterance", t.as_str()),
            DialogEvent::Timeout => (Direction::System, TIMEOUT, ""),
            DialogEvent::SessionEnd => (Direction::System, SESSION_END, ""),
        };
        Self::new(session_id, direction, kind, text, turn, phase)
    }

    /// The input event this line records, if it records one.
    pub fn event(&self) -> Option<DialogEvent> {
        match (self.direction, self.kind.as_str()) {
            (Direction::System, "session.start") => Some(DialogEvent::SessionStart),
            (Direction::User, "user.utterance") => Some(DialogEvent::UserUtterance(self.text.clone())),
            (Direction::System, TIMEOUT) => Some(DialogEvent::Timeout),
            (Direction::System, SESSION_END) => Some(DialogEvent::SessionEnd),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("agent line {index} differs: transcript {recorded:?}, replay {replayed:?}")]
    Mismatch {
        index: usize,
        recorded: Option<String>,
        replayed: Option<String>,
    },
}

/// Writes transcripts under a directory; a store without a directory drops everything.
#[derive(Debug)]
pub struct TranscriptStore {
    dir: Option<PathBuf>,
    degraded: AtomicBool,
}

impl TranscriptStore {
    pub fn new(dir: Option<PathBuf>) -> io::Result<Arc<Self>> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Arc::new(Self {
            dir,
            degraded: AtomicBool::new(false),
        }))
    }

    pub fn disabled() -> Arc<Self> {
        Arc::new(Self {
            dir: None,
            degraded: AtomicBool::new(false),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded.load(Ordering::Relaxed)
    }

    pub fn path_for(&self, session_id: &str) -> Option<PathBuf> {
        // ids are generated hex; anything else never reaches the filesystem
        if session_id.is_empty() || !session_id.chars().all(|c| c.is_ascii_alphanumeric()) {
            return None;
        }
        self.dir.as_ref().map(|d| d.join(format!("{session_id}.jsonl")))
    }

    pub fn write_header(&self, header: &TranscriptHeader) {
        self.write(
            &header.session_id,
            &[serde_json::to_string(header).expect("header serializes")],
        );
    }

    pub fn append(&self, session_id: &str, lines: &[TranscriptLine]) {
        let encoded: Vec<String> = lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("line serializes"))
            .collect();
        self.write(session_id, &encoded);
    }

    /// Appends and syncs. Failures are logged and mark the store degraded.
    fn write(&self, session_id: &str, lines: &[String]) {
        if self.dir.is_none() || lines.is_empty() {
            return;
        }
        let Some(path) = self.path_for(session_id) else {
            tracing::warn!(session_id, "refusing to write transcript for malformed session id");
            return;
        };
        let result = (|| -> io::Result<()> {
            let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
            let mut buf = String::new();
            for l in lines {
                buf.push_str(l);
                buf.push('\n');
            }
            f.write_all(buf.as_bytes())?;
            f.sync_data()
        })();
        if let Err(e) = result {
            self.degraded.store(true, Ordering::Relaxed);
            tracing::error!(path = %path.display(), error = %e, "transcript write failed");
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub lines: Vec<TranscriptLine>,
}

impl Transcript {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        let path = path.as_ref();
        let io_err = |source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut header = None;
        let mut lines = Vec::new();
        for (i, raw) in reader.lines().enumerate() {
            let raw = raw.map_err(io_err)?;
            let fmt_err = |e: serde_json::Error| TranscriptError::Format {
                line: i + 1,
                message: e.to_string(),
            };
            if i == 0 {
                header = Some(serde_json::from_str(&raw).map_err(fmt_err)?);
            } else {
                lines.push(serde_json::from_str(&raw).map_err(fmt_err)?);
            }
        }
        let header = header.ok_or(TranscriptError::Format {
            line: 1,
            message: "empty transcript".into(),
        })?;
        Ok(Self { header, lines })
    }

    pub fn started_at(&self) -> Option<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.header.started_at)
            .ok()
            .map(|t| t.with_timezone(&Utc))
    }

    pub fn events(&self) -> Vec<DialogEvent> {
        self.lines.iter().filter_map(TranscriptLine::event).collect()
    }

    pub fn agent_lines(&self) -> Vec<&str> {
        self.lines
            .iter()
            .filter(|l| l.direction == Direction::Agent)
            .map(|l| l.text.as_str())
            .collect()
    }

    /// Replays the recorded events and checks the agent said exactly the same thing.
    pub fn verify_replay(&self, kb: Arc<QaKnowledgeBase>, config: DialogConfig) -> Result<usize, TranscriptError> {
        let config = DialogConfig {
            phase_order: self.header.phase_order.clone(),
            ..config
        };
        let trace =
            replay(kb, self.header.seed, config, &self.events()).map_err(|e| TranscriptError::Replay(e.to_string()))?;
        let replayed = trace.agent_lines();
        let recorded = self.agent_lines();
        for i in 0..replayed.len().max(recorded.len()) {
            if replayed.get(i) != recorded.get(i) {
                return Err(TranscriptError::Mismatch {
                    index: i,
                    recorded: recorded.get(i).map(|s| s.to_string()),
                    replayed: replayed.get(i).map(|s| s.to_string()),
                });
            }
        }
        Ok(recorded.len())
    }
}

/// Checks every line uses exactly the allowed keys: the header keys on the
/// first line, the transcript line keys everywhere else.
pub fn check_schema(path: impl AsRef<Path>) -> Result<usize, TranscriptError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header: BTreeSet<&str> = HEADER_KEYS.into_iter().collect();
    let line: BTreeSet<&str> = LINE_KEYS.into_iter().collect();
    let mut n = 0;
    for (i, raw) in text.lines().enumerate() {
        let value: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(raw).map_err(|e| TranscriptError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
        let keys: BTreeSet<&str> = value.keys().map(String::as_str).collect();
        let allowed = if i == 0 { &header } else { &line };
        if &keys != allowed {
            let extra: Vec<&&str> = keys.difference(allowed).collect();
            let missing: Vec<&&str> = allowed.difference(&keys).collect();
            return Err(TranscriptError::Format {
                line: i + 1,
                message: format!("unexpected keys {extra:?}, missing keys {missing:?}"),
            });
        }
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(id: &str) -> TranscriptHeader {
        TranscriptHeader {
            session_id: id.into(),
            seed: 7,
            kb_version: 1,
            phase_order: PhaseOrder::AskerFirst,
            started_at: format_ts(&Utc::now()),
        }
    }

    #[test]
    fn header_then_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(Some(dir.path().to_path_buf())).unwrap();
        store.write_header(&header("ab12"));
        let ev = DialogEvent::UserUtterance("yes".into());
        store.append("ab12", &[TranscriptLine::for_event("ab12", &ev, 1, "agent-asks")]);
        let path = store.path_for("ab12").unwrap();
        assert_eq!(check_schema(&path).unwrap(), 2);
        let t = Transcript::read(&path).unwrap();
        assert_eq!(t.header.seed, 7);
        assert_eq!(t.events(), vec![ev]);
        assert!(t.started_at().is_some());
    }

    #[test]
    fn schema_rejects_extra_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let mut h = serde_json::to_value(header("x")).unwrap();
        fs::write(&path, format!("{h}\n")).unwrap();
        assert_eq!(check_schema(&path).unwrap(), 1);
        h["email"] = "a@b".into();
        fs::write(&path, format!("{h}\n")).unwrap();
        let err = check_schema(&path).unwrap_err().to_string();
        assert!(err.contains("email"), "{err}");
    }

    #[test]
    fn malformed_ids_never_touch_disk() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(Some(dir.path().to_path_buf())).unwrap();
        assert!(store.path_for("../etc").is_none());
        assert!(store.path_for("").is_none());
        store.append(
            "../x",
            &[TranscriptLine::new(
                "../x",
                Direction::Agent,
                "agent.utterance",
                "hi",
                0,
                "intro",
            )],
        );
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn write_failure_degrades() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(Some(dir.path().join("sub"))).unwrap();
        fs::remove_dir(dir.path().join("sub")).unwrap();
        store.write_header(&header("ab"));
        assert!(store.is_degraded());
    }

    #[test]
    fn disabled_store_is_silent() {
        let store = TranscriptStore::disabled();
        store.write_header(&header("ab"));
        assert!(!store.is_degraded());
        assert!(store.path_for("ab").is_none());
    }
}
