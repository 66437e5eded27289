#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use emo20q_core::dialog::{DialogConfig, DialogContext, PhaseOrder};
use emo20q_core::kb::{load_kb, QaKnowledgeBase};
use emo20q_service::protocol::{MessageType, WireMessage};
use emo20q_service::server::{spawn_server, AppState, ServerOptions};
use emo20q_service::transcript::TranscriptStore;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub const RECV_TIMEOUT: Duration = Duration::from_secs(10);

pub fn fixture_kb() -> Arc<QaKnowledgeBase> {
    let path = format!("{}/../core/tests/fixtures/kb_small.json", env!("CARGO_MANIFEST_DIR"));
    Arc::new(load_kb(path).unwrap())
}

pub struct Live {
    pub addr: SocketAddr,
    pub state: AppState,
    pub kb: Arc<QaKnowledgeBase>,
    _task: tokio::task::JoinHandle<()>,
}

pub async fn start(kb: Arc<QaKnowledgeBase>, dir: Option<&Path>, options: ServerOptions, order: PhaseOrder) -> Live {
    let config = DialogConfig {
        phase_order: order,
        ..DialogConfig::default()
    };
    let ctx = Arc::new(DialogContext::new(Arc::clone(&kb), config));
    let store = TranscriptStore::new(dir.map(Path::to_path_buf)).unwrap();
    let state = AppState::new(ctx, store, options);
    let (addr, task) = spawn_server(state.clone(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    Live {
        addr,
        state,
        kb,
        _task: task,
    }
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    pub session_id: String,
    pub received: Vec<WireMessage>,
}

impl Client {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
        Self {
            ws,
            session_id: String::new(),
            received: Vec::new(),
        }
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::text(text.to_string())).await.unwrap();
    }

    pub async fn send(&mut self, kind: MessageType, text: &str) {
        let m = WireMessage::new(kind, self.session_id.clone(), 0, text, "");
        self.send_raw(&m.encode()).await;
    }

    /// Next wire message, or `None` once the server closes the connection.
    pub async fn recv(&mut self) -> Option<WireMessage> {
        loop {
            let frame = tokio::time::timeout(RECV_TIMEOUT, self.ws.next())
                .await
                .expect("timed out waiting for the server");
            match frame {
                Some(Ok(Message::Text(t))) => {
                    let m = WireMessage::decode(&t).expect("server sent a valid message");
                    if m.kind == MessageType::SessionStart {
                        self.session_id = m.session_id.clone();
                    }
                    self.received.push(m.clone());
                    return Some(m);
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return None,
                Some(Ok(_)) => continue,
            }
        }
    }

    /// Messages up to and including the next `game.state`, plus a trailing `game.end`.
    pub async fn recv_batch(&mut self) -> Vec<WireMessage> {
        let mut out = Vec::new();
        while let Some(m) = self.recv().await {
            let kind = m.kind;
            out.push(m);
            match kind {
                MessageType::GameState | MessageType::Error => break,
                _ => {}
            }
        }
        if out.last().and_then(game_state).is_some_and(|s| s == "GameEnd") {
            if let Some(end) = self.recv().await {
                out.push(end);
            }
        }
        out
    }

    pub async fn start(&mut self) -> Vec<WireMessage> {
        self.send(MessageType::SessionStart, "").await;
        self.recv_batch().await
    }

    pub async fn say(&mut self, text: &str) -> Vec<WireMessage> {
        self.send(MessageType::UserUtterance, text).await;
        self.recv_batch().await
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// Control state carried by a `game.state` message.
pub fn game_state(m: &WireMessage) -> Option<String> {
    if m.kind != MessageType::GameState {
        return None;
    }
    let v: serde_json::Value = serde_json::from_str(&m.text).ok()?;
    v["state"].as_str().map(str::to_string)
}

/// Plays a whole session with a fixed script: answers alternate yes/no,
/// guesses are rejected, and in the answering phase the client guesses words
/// from the lexicon in order. Returns the number of user utterances sent.
pub async fn play_scripted(client: &mut Client, kb: &QaKnowledgeBase) -> usize {
    let mut batch = client.start().await;
    let mut sent = 0;
    let mut next_guess = 0;
    loop {
        let state = batch
            .iter()
            .rev()
            .find_map(game_state)
            .expect("batch ends with game.state");
        let reply = match state.as_str() {
            "GameEnd" => return sent,
            "GuessPending" => "no".to_string(),
            "AwaitQuestion" => {
                let w = kb.lexicon().words()[next_guess % kb.lexicon().len()].clone();
                next_guess += 1;
                format!("is it {w}?")
            }
            _ => if sent % 2 == 0 { "yes" } else { "no" }.to_string(),
        };
        batch = client.say(&reply).await;
        sent += 1;
        assert!(sent < 100, "scripted game did not finish");
    }
}
