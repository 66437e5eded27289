//! Adapter for a classifier running in another process.
//!
//! The child reads one JSON request per line on stdin,
//! `{"emotion": "...", "question": "..."}`, and writes one response per line on
//! stdout, `{"answer": "yes" | "no" | "maybe"}`. A reply that is late, missing or
//! malformed falls back to the wrapped classifier; after a timeout the child is
//! killed and every later call goes straight to the fallback.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::AnswerClassifier;
use crate::model::AnswerCategory;

#[derive(Serialize)]
struct Request<'a> {
    emotion: &'a str,
    question: &'a str,
}

#[derive(Deserialize)]
struct Response {
    answer: AnswerCategory,
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Drop for ChildIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalClassifier {
    io: Mutex<Option<ChildIo>>,
    fallback: Arc<dyn AnswerClassifier>,
    timeout: Duration,
}

impl ExternalClassifier {
    pub fn spawn(
        mut command: Command,
        timeout: Duration,
        fallback: Arc<dyn AnswerClassifier>,
    ) -> std::io::Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            io: Mutex::new(Some(ChildIo { child, stdin, lines })),
            fallback,
            timeout,
        })
    }

    /// Whether the child process is still in use.
    pub fn is_connected(&self) -> bool {
        self.io.lock().map(|g| g.is_some()).unwrap_or(false)
    }

    fn ask(&self, emotion: &str, question: &str) -> Option<AnswerCategory> {
        let mut guard = self.io.lock().ok()?;
        let io = guard.as_mut()?;
        let request = serde_json::to_string(&Request { emotion, question }).ok()?;
        let sent = writeln!(io.stdin, "{request}").and_then(|_| io.stdin.flush());
        if let Err(e) = sent {
            tracing::warn!(error = %e, "external classifier unavailable, using fallback");
            *guard = None;
            return None;
        }
        match io.lines.recv_timeout(self.timeout) {
            Ok(line) => match serde_json::from_str::<Response>(&line) {
                Ok(r) => Some(r.answer),
                Err(e) => {
                    tracing::warn!(error = %e, "malformed external classifier reply");
                    None
                }
            },
            Err(e) => {
                // a late reply would be read as the answer to the next request
                tracing::warn!(error = %e, "external classifier timed out, disconnecting");
                *guard = None;
                None
            }
        }
    }
}

impl AnswerClassifier for ExternalClassifier {
    fn classify(&self, emotion: &str, question: &str) -> AnswerCategory {
        self.ask(emotion, question)
            .unwrap_or_else(|| self.fallback.classify(emotion, question))
    }
}
