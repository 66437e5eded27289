//! Chat server: `/ws` for the game, `/healthz` for liveness, `/` for the UI.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::Utc;
use emo20q_core::derive_seed;
use emo20q_core::dialog::{DialogContext, DialogError, DialogEvent, DialogMachine, PhaseOrder};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::protocol::{format_ts, MessageType, WireMessage};
use crate::transcript::{Direction, TranscriptHeader, TranscriptLine, TranscriptStore};

const PLACEHOLDER_PAGE: &str = r#"<!doctype html>
<html lang="en">
<head><meta charset="utf-8"><title>emo20q</title></head>
<body>
<h1>emo20q</h1>
<p>The chat endpoint is at <code>/ws</code>. Start the server with <code>--static-dir</code> to serve a web client here.</p>
</body>
</html>
"#;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub master_seed: u64,
    pub idle_timeout: Duration,
    /// How long a disconnected session stays available for reconnect.
    pub retention: Duration,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            master_seed: 0,
            idle_timeout: Duration::from_secs(120),
            retention: Duration::from_secs(600),
            static_dir: None,
        }
    }
}

#[derive(Debug)]
pub struct Session {
    id: String,
    machine: DialogMachine,
    /// Sequence number of the next outgoing message.
    next_turn: u64,
    /// Number of input events applied so far.
    events: u64,
    connected: bool,
    created_at: Instant,
    last_active: Instant,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn machine(&self) -> &DialogMachine {
        &self.machine
    }

    pub fn age(&self) -> Duration {
        self.created_at.elapsed()
    }

    fn message(&mut self, kind: MessageType, text: impl Into<String>) -> WireMessage {
        let m = WireMessage::new(kind, self.id.clone(), self.next_turn, text, self.machine.phase_label());
        self.next_turn += 1;
        m
    }

    fn state_message(&mut self) -> WireMessage {
        let text = json!({
            "state": self.machine.state().as_str(),
            "asker_turns": self.machine.asker().turns_used,
            "answerer_turns": self.machine.answerer().turns_used,
        })
        .to_string();
        self.message(MessageType::GameState, text)
    }

    /// Steps the machine, persists the exchange, and returns the replies in order.
    fn apply(&mut self, event: &DialogEvent, store: &TranscriptStore) -> Vec<WireMessage> {
        self.last_active = Instant::now();
        let phase_before = self.machine.phase_label();
        let (next, utterances) = match self.machine.step(event) {
            Ok(r) => r,
            Err(e @ DialogError::ProtocolViolation { .. }) => {
                return vec![self.message(MessageType::Error, e.to_string())];
            }
            Err(e) => {
                tracing::error!(session = %self.id, error = %e, "dialog machine failed");
                return vec![self.message(MessageType::Error, "internal error")];
            }
        };
        self.machine = next;
        let turn = self.events;
        self.events += 1;

        let phase = self.machine.phase_label();
        let mut lines = vec![TranscriptLine::for_event(&self.id, event, turn, phase_before)];
        lines.extend(
            utterances
                .iter()
                .map(|u| TranscriptLine::new(&self.id, Direction::Agent, "agent.utterance", u, turn, phase)),
        );
        store.append(&self.id, &lines);

        let mut out: Vec<WireMessage> = utterances
            .into_iter()
            .map(|u| self.message(MessageType::AgentUtterance, u))
            .collect();
        out.push(self.state_message());
        if self.machine.is_over() {
            out.push(self.message(MessageType::GameEnd, ""));
        }
        out
    }
}

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

struct Inner {
    ctx: Arc<DialogContext>,
    store: Arc<TranscriptStore>,
    options: ServerOptions,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    counter: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(ctx: Arc<DialogContext>, store: Arc<TranscriptStore>, options: ServerOptions) -> Self {
        Self(Arc::new(Inner {
            ctx,
            store,
            options,
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }))
    }

    pub fn store(&self) -> &Arc<TranscriptStore> {
        &self.0.store
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.lock().unwrap().len()
    }

    pub fn session(&self, id: &str) -> Option<SessionHandle> {
        self.0.sessions.lock().unwrap().get(id).cloned()
    }

    fn phase_order(&self) -> &PhaseOrder {
        &self.0.ctx.config().phase_order
    }

    fn create_session(&self) -> SessionHandle {
        let id = hex::encode(rand::random::<[u8; 16]>());
        let counter = self.0.counter.fetch_add(1, Ordering::Relaxed);
        let seed = derive_seed(self.0.options.master_seed, counter);
        self.0.store.write_header(&TranscriptHeader {
            session_id: id.clone(),
            seed,
            kb_version: self.0.ctx.kb().version(),
            phase_order: self.phase_order().clone(),
            started_at: format_ts(&Utc::now()),
        });
        tracing::info!(session = %id, seed, "session created");
        let now = Instant::now();
        let handle = Arc::new(tokio::sync::Mutex::new(Session {
            id: id.clone(),
            machine: DialogMachine::new(Arc::clone(&self.0.ctx), seed),
            next_turn: 0,
            events: 0,
            connected: true,
            created_at: now,
            last_active: now,
        }));
        self.0.sessions.lock().unwrap().insert(id, Arc::clone(&handle));
        handle
    }

    fn remove(&self, id: &str) {
        self.0.sessions.lock().unwrap().remove(id);
    }

    /// Ends and drops sessions that have been disconnected longer than the retention period.
    pub async fn evict_stale(&self) -> usize {
        let handles: Vec<SessionHandle> = self.0.sessions.lock().unwrap().values().cloned().collect();
        let mut evicted = 0;
        for h in handles {
            let mut s = h.lock().await;
            if s.connected || s.last_active.elapsed() < self.0.options.retention {
                continue;
            }
            if !s.machine.is_over() {
                s.apply(&DialogEvent::SessionEnd, &self.0.store);
            }
            tracing::info!(session = %s.id, "session evicted");
            self.remove(&s.id);
            evicted += 1;
        }
        evicted
    }
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.0.options.static_dir.clone();
    let router = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/healthz", get(healthz));
    let router = match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => router.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    };
    router.with_state(state)
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    let store = &state.0.store;
    let transcripts = match (store.dir(), store.is_degraded()) {
        (None, _) => "disabled",
        (Some(_), true) => "degraded",
        (Some(_), false) => "ok",
    };
    Json(json!({
        "status": if store.is_degraded() { "degraded" } else { "ok" },
        "sessions": state.session_count(),
        "transcripts": transcripts,
    }))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| handle_connection(socket, state))
        .into_response()
}

async fn send_all(socket: &mut WebSocket, messages: Vec<WireMessage>) -> bool {
    for m in messages {
        if socket.send(Message::Text(m.encode().into())).await.is_err() {
            return false;
        }
    }
    true
}

fn detached_error(text: impl Into<String>) -> WireMessage {
    WireMessage::new(MessageType::Error, "", 0, text, "")
}

/// Runs one client connection. Messages for a session are handled strictly in
/// arrival order; a dropped connection leaves the session open for reconnect.
pub async fn handle_connection(mut socket: WebSocket, state: AppState) {
    let mut session: Option<SessionHandle> = None;
    let idle = state.0.options.idle_timeout;
    loop {
        let frame = match tokio::time::timeout(idle, socket.recv()).await {
            Err(_) => {
                let Some(h) = &session else { continue };
                let out = h.lock().await.apply(&DialogEvent::Timeout, &state.0.store);
                if !send_all(&mut socket, out).await {
                    break;
                }
                if h.lock().await.machine.is_over() {
                    break;
                }
                continue;
            }
            Ok(None) | Ok(Some(Err(_))) => break,
            Ok(Some(Ok(frame))) => frame,
        };
        let text = match frame {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
            Message::Binary(_) => {
                let reply = reply_error(&session, "binary frames are not supported").await;
                if !send_all(&mut socket, vec![reply]).await {
                    break;
                }
                continue;
            }
        };
        let out = match WireMessage::decode(&text) {
            Err(e) => vec![reply_error(&session, e.to_string()).await],
            Ok(msg) => match msg.kind {
                MessageType::SessionStart => start_or_resume(&state, &mut session, &msg).await,
                MessageType::UserUtterance => match &session {
                    Some(h) => {
                        let event = DialogEvent::UserUtterance(msg.text);
                        h.lock().await.apply(&event, &state.0.store)
                    }
                    None => vec![detached_error("send session.start first")],
                },
                other => vec![reply_error(&session, format!("clients may not send {other}")).await],
            },
        };
        if !send_all(&mut socket, out).await {
            break;
        }
        if let Some(h) = &session {
            if h.lock().await.machine.is_over() {
                let _ = socket.send(Message::Close(None)).await;
                break;
            }
        }
    }

    if let Some(h) = session {
        let mut s = h.lock().await;
        s.connected = false;
        s.last_active = Instant::now();
        if s.machine.is_over() {
            state.remove(&s.id);
        }
    }
}

async fn reply_error(session: &Option<SessionHandle>, text: impl Into<String>) -> WireMessage {
    match session {
        Some(h) => h.lock().await.message(MessageType::Error, text),
        None => detached_error(text),
    }
}

async fn start_or_resume(state: &AppState, session: &mut Option<SessionHandle>, msg: &WireMessage) -> Vec<WireMessage> {
    if let Some(h) = session {
        return vec![h.lock().await.message(MessageType::Error, "session already started")];
    }
    if !msg.session_id.is_empty() {
        if let Some(h) = state.session(&msg.session_id) {
            let mut s = h.lock().await;
            if s.connected {
                return vec![detached_error("session is attached to another connection")];
            }
            s.connected = true;
            s.last_active = Instant::now();
            let ack = s.message(MessageType::SessionStart, "");
            let st = s.state_message();
            drop(s);
            *session = Some(h);
            return vec![ack, st];
        }
    }
    let h = state.create_session();
    let mut s = h.lock().await;
    let mut out = vec![s.message(MessageType::SessionStart, "")];
    out.extend(s.apply(&DialogEvent::SessionStart, &state.0.store));
    drop(s);
    *session = Some(h);
    out
}

/// Periodically evicts stale sessions until the returned handle is aborted.
pub fn spawn_reaper(state: AppState) -> JoinHandle<()> {
    let period = (state.0.options.retention / 4).max(Duration::from_millis(50));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            state.evict_stale().await;
        }
    })
}

/// Binds `addr` and serves until the task is dropped. Returns the bound address.
pub async fn spawn_server(state: AppState, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let reaper = spawn_reaper(state.clone());
    let app = router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "server stopped");
        }
        reaper.abort();
    });
    Ok((local, handle))
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let reaper = spawn_reaper(state.clone());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    reaper.abort();
    Ok(())
}
