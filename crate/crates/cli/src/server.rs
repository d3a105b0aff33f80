//! HTTP session service for the commander console.
//!
//! Bodies are the same JSON shapes the core types serialize to. Step events
//! are pushed over server-sent events; a stream replays everything the
//! session has emitted so far and ends once the session finishes.

use std::collections::HashMap;
use std::convert::Infallible;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use avdn_core::dataset::save_episodes;
use avdn_core::simulator::{SessionEvent, SessionPhase, SessionRegistry, SessionSnapshot, SessionSource};
use avdn_core::Error;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

pub struct AppState {
    registry: SessionRegistry,
    /// Event count per session, bumped after every committed instruction.
    counters: Mutex<HashMap<String, watch::Sender<usize>>>,
    transcripts: Option<PathBuf>,
    next_seed: AtomicU64,
}

impl AppState {
    /// Sessions created without a body draw seeds `base_seed, base_seed + 1, ...`.
    pub fn new(registry: SessionRegistry, transcripts: Option<PathBuf>, base_seed: u64) -> Self {
        Self {
            registry,
            counters: Mutex::new(HashMap::new()),
            transcripts,
            next_seed: AtomicU64::new(base_seed),
        }
    }

    pub fn registry(&self) -> &SessionRegistry {
        &self.registry
    }

    fn counter(&self, id: &str) -> watch::Receiver<usize> {
        let mut map = self.counters.lock().expect("counter lock");
        map.entry(id.to_string()).or_insert_with(|| watch::channel(0).0).subscribe()
    }

    fn bump(&self, id: &str, count: usize) {
        let mut map = self.counters.lock().expect("counter lock");
        map.entry(id.to_string())
            .or_insert_with(|| watch::channel(0).0)
            .send_replace(count);
    }

    fn record(&self, id: &str, events: &[SessionEvent]) -> std::io::Result<()> {
        let Some(dir) = &self.transcripts else {
            return Ok(());
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{id}.jsonl")))?;
        for e in events {
            serde_json::to_writer(&mut file, e)?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }

    fn save_finished(&self, id: &str) -> anyhow::Result<()> {
        let Some(dir) = &self.transcripts else {
            return Ok(());
        };
        let session = self.registry.get(id).ok_or_else(|| anyhow::anyhow!("session {id} vanished"))?;
        let ep = session.lock().expect("session lock").to_episode()?;
        save_episodes(&[ep], dir.join(format!("{id}.episode.jsonl")))?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Protocol(_) => StatusCode::CONFLICT,
            Error::Capacity(_) => StatusCode::SERVICE_UNAVAILABLE,
            Error::Io(_) | Error::AtStep { .. } | Error::Member { .. } | Error::NonFinite(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session `{id}`"))
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct InstructionBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstructionReply {
    pub events: Vec<SessionEvent>,
    pub state: SessionSnapshot,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_state))
        .route("/sessions/{id}/instructions", post(instruct))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

async fn health(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "sessions": app.registry.len() }))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let source = if body.iter().all(u8::is_ascii_whitespace) {
        SessionSource::Seed(app.next_seed.fetch_add(1, Ordering::Relaxed))
    } else {
        serde_json::from_slice::<SessionSource>(&body)
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("bad session request: {e}")))?
    };
    let snap = app.registry.open_session(&source)?;
    app.bump(&snap.session_id, 0);
    Ok((StatusCode::CREATED, Json(snap)).into_response())
}

async fn session_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    let session = app.registry.get(&id).ok_or_else(|| not_found(&id))?;
    let snap = session.lock().expect("session lock").snapshot();
    Ok(Json(snap))
}

async fn instruct(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<InstructionReply>, ApiError> {
    if app.registry.get(&id).is_none() {
        return Err(not_found(&id));
    }
    let body: InstructionBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("bad instruction request: {e}")))?;
    let worker = app.clone();
    let sid = id.clone();
    let (events, snap) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let session = worker.registry.get(&sid).ok_or_else(|| not_found(&sid))?;
        let mut state = session.lock().expect("session lock");
        let events = state.submit_instruction(&body.text, worker.registry.autopilot(), worker.registry.config())?;
        worker.record(&sid, &events).map_err(internal)?;
        worker.bump(&sid, state.events.len());
        Ok((events, state.snapshot()))
    })
    .await
    .map_err(internal)??;
    if snap.phase == SessionPhase::Finished {
        app.save_finished(&id).map_err(internal)?;
    }
    Ok(Json(InstructionReply { events, state: snap }))
}

fn event_name(e: &SessionEvent) -> &'static str {
    match e {
        SessionEvent::Instruction { .. } => "instruction",
        SessionEvent::Moved { .. } => "moved",
        SessionEvent::Question { .. } => "question",
        SessionEvent::Stopped { .. } => "stopped",
    }
}

async fn events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = app.registry.get(&id).ok_or_else(|| not_found(&id))?;
    let rx = app.counter(&id);
    let stream = futures::stream::unfold((session, rx, 0usize, Vec::<Event>::new(), false), |state| async move {
        let (session, mut rx, mut seen, mut queue, mut done) = state;
        loop {
            if !queue.is_empty() {
                let ev = queue.remove(0);
                return Some((Ok(ev), (session, rx, seen, queue, done)));
            }
            if done {
                return None;
            }
            {
                let s = session.lock().expect("session lock");
                for e in &s.events[seen..] {
                    let data = serde_json::to_string(e).expect("event json");
                    queue.push(Event::default().event(event_name(e)).data(data));
                }
                seen = s.events.len();
                done = s.phase == SessionPhase::Finished;
            }
            if queue.is_empty() && !done && rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
