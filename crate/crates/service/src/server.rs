//! HTTP and WebSocket front end.
//!
//! Each session slot has one writer lock around its [`LiveSession`]. Ingest,
//! control and the simulator take the lock per record; the broadcaster takes
//! it once per cadence tick to copy a snapshot, then publishes through a
//! `watch` channel, which keeps only the latest message for slow readers.

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::body::Body;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cogload_core::config::{validate_config, SessionConfig};
use cogload_core::record::Record;
use cogload_core::types::{Timestamp, WorkstationLayout};
use cogload_replay::log::{parse_header_line, parse_record_line, Parsed};
use cogload_replay::simulator::LiveState;
use cogload_replay::LiveSimulator;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::feedback::{Broadcaster, FeedbackMessage, SessionSnapshot, BROADCAST_HZ, WARNING_REARM};
use crate::session::{IngestError, LiveSession, REORDER_WINDOW};
use crate::wire::{ControlCommand, ControlReply, ControlRequest, IngestOutcome, IngestReply};

const DEFAULT_SESSION: &str = "live";
const SIM_FRAME_RATE: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    pub layout: WorkstationLayout,
    pub broadcast_hz: f64,
    pub reorder_window: f64,
    /// Static token required on every API request when set.
    pub token: Option<String>,
    /// Keys sessions by the `session` query parameter.
    pub multi_session: bool,
    /// Directory served at `/` for the dashboard.
    pub assets: Option<PathBuf>,
    pub warning_rearm: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            layout: WorkstationLayout::desk(),
            broadcast_hz: BROADCAST_HZ,
            reorder_window: REORDER_WINDOW,
            token: None,
            multi_session: false,
            assets: None,
            warning_rearm: WARNING_REARM,
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn wall_clock() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct SimHandle {
    sim: Arc<Mutex<LiveSimulator>>,
    task: JoinHandle<()>,
}

/// One live session with its feedback channel.
pub struct Slot {
    session: Mutex<LiveSession>,
    feedback: watch::Sender<FeedbackMessage>,
    broadcaster: Mutex<Broadcaster>,
    sim: Mutex<Option<SimHandle>>,
    window: f64,
}

impl Slot {
    fn new(session: LiveSession, rearm: f64, window: f64) -> Self {
        let mut broadcaster = Broadcaster::new(rearm);
        let first = broadcaster.next(&snapshot(&session), wall_clock());
        let (feedback, _) = watch::channel(first);
        Self {
            session: Mutex::new(session),
            feedback,
            broadcaster: Mutex::new(broadcaster),
            sim: Mutex::new(None),
            window,
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        snapshot(&lock(&self.session))
    }

    /// Builds and publishes the next feedback message.
    pub fn broadcast(&self) -> FeedbackMessage {
        let snap = self.snapshot();
        let message = lock(&self.broadcaster).next(&snap, wall_clock());
        self.feedback.send_replace(message.clone());
        message
    }

    pub fn subscribe(&self) -> watch::Receiver<FeedbackMessage> {
        self.feedback.subscribe()
    }

    pub fn latest(&self) -> FeedbackMessage {
        self.feedback.borrow().clone()
    }

    fn replace_session(&self, session: LiveSession) -> String {
        let id = session.id().to_string();
        *lock(&self.session) = session;
        id
    }

    fn stop_sim(&self) {
        if let Some(h) = lock(&self.sim).take() {
            h.task.abort();
        }
    }

    /// Handles one `/ingest` text line.
    pub fn ingest_line(&self, line: &str) -> Vec<IngestReply> {
        let is_header = serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| {
                v.get("kind")
                    .and_then(|k| k.as_str())
                    .map(|k| k == "header")
            })
            .unwrap_or(false);
        if is_header {
            return vec![match parse_header_line(line, 1) {
                Ok(header) => {
                    self.stop_sim();
                    let session =
                        self.replace_session(LiveSession::from_header(&header, self.window));
                    IngestOutcome::Session { session }.into()
                }
                Err(e) => IngestOutcome::Error {
                    seq: None,
                    reason: e.to_string(),
                }
                .into(),
            }];
        }
        match parse_record_line(line) {
            Ok(Parsed::Record(record)) => self.ingest(record),
            Ok(Parsed::Skipped(record_kind)) => vec![IngestOutcome::Skipped { record_kind }.into()],
            Err(e) => vec![IngestOutcome::Error {
                seq: None,
                reason: e.to_string(),
            }
            .into()],
        }
    }

    pub fn ingest(&self, record: Record) -> Vec<IngestReply> {
        let result = lock(&self.session).ingest(record);
        match result {
            Ok(ack) => {
                let mut out = vec![IngestOutcome::Ack { seq: ack.seq }.into()];
                out.extend(ack.errors.into_iter().map(|e| {
                    IngestOutcome::Error {
                        seq: Some(e.seq),
                        reason: e.source.to_string(),
                    }
                    .into()
                }));
                out
            }
            Err(IngestError::Closed) => vec![IngestOutcome::SessionError {
                reason: IngestError::Closed.to_string(),
            }
            .into()],
            Err(e) => vec![IngestOutcome::Rejected {
                reason: e.to_string(),
            }
            .into()],
        }
    }

    /// Applies one `/control` command.
    pub fn control(
        self: &Arc<Self>,
        command: ControlCommand,
    ) -> Result<ControlReply, ControlReply> {
        let id = lock(&self.session).id().to_string();
        match command {
            ControlCommand::Start { session_id } => {
                self.stop_sim();
                let fresh = {
                    let s = lock(&self.session);
                    LiveSession::new(
                        session_id.unwrap_or_else(|| s.id().to_string()),
                        s.config().clone(),
                        s.layout().clone(),
                        self.window,
                    )
                };
                Ok(ControlReply::ok(self.replace_session(fresh)))
            }
            ControlCommand::Stop => {
                self.stop_sim();
                let mut s = lock(&self.session);
                let (_, errors) = s
                    .finish()
                    .map_err(|e| ControlReply::error(&id, e.to_string()))?;
                let mut reply = ControlReply::ok(&id);
                reply.final_score = s.latest().and_then(|t| t.score.clone());
                if let Some(e) = errors.first() {
                    reply.error = Some(e.to_string());
                }
                Ok(reply)
            }
            ControlCommand::Config { config, layout } => {
                let config = config.to_session_config();
                let violations = validate_config(&config);
                if !violations.is_empty() {
                    let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
                    return Err(ControlReply::error(&id, text.join("; ")));
                }
                let layout = layout.unwrap_or_else(|| lock(&self.session).layout().clone());
                let problems = layout.violations();
                if !problems.is_empty() {
                    return Err(ControlReply::error(&id, problems.join("; ")));
                }
                self.stop_sim();
                Ok(ControlReply::ok(self.replace_session(LiveSession::new(
                    id.clone(),
                    config,
                    layout,
                    self.window,
                ))))
            }
            ControlCommand::SimStart {
                seed,
                frame_rate,
                calibration,
            } => {
                let frame_rate = frame_rate.unwrap_or(SIM_FRAME_RATE);
                if !(frame_rate > 0.0 && frame_rate <= 240.0) {
                    return Err(ControlReply::error(
                        &id,
                        format!("frame rate {frame_rate} out of (0, 240]"),
                    ));
                }
                self.stop_sim();
                let (config, layout) = {
                    let s = lock(&self.session);
                    (s.config().clone(), s.layout().clone())
                };
                self.replace_session(LiveSession::new(
                    id.clone(),
                    config.clone(),
                    layout.clone(),
                    self.window,
                ));
                let sim = LiveSimulator::new(layout, config, seed.unwrap_or(0), frame_rate)
                    .with_calibration(calibration.unwrap_or(0.0));
                let sim = Arc::new(Mutex::new(sim));
                let task = tokio::spawn(drive_simulator(
                    Arc::clone(self),
                    Arc::clone(&sim),
                    frame_rate,
                ));
                *lock(&self.sim) = Some(SimHandle { sim, task });
                Ok(ControlReply::ok(id))
            }
            ControlCommand::SimStop => {
                self.stop_sim();
                Ok(ControlReply::ok(id))
            }
            ControlCommand::Sim {
                gaze,
                proximity,
                agitation,
                noise_dba,
                self_touch,
            } => {
                let guard = lock(&self.sim);
                let Some(handle) = guard.as_ref() else {
                    return Err(ControlReply::error(&id, "simulator is not running"));
                };
                let mut sim = lock(&handle.sim);
                let current = sim.state().clone();
                let next = LiveState {
                    gaze: gaze.unwrap_or(current.gaze),
                    proximity: proximity.unwrap_or(current.proximity),
                    agitation: agitation.unwrap_or(current.agitation),
                    noise_dba: noise_dba.or(current.noise_dba),
                };
                if next != current {
                    sim.set_state(next)
                        .map_err(|e| ControlReply::error(&id, e.to_string()))?;
                }
                if let Some(hand) = self_touch {
                    sim.self_touch(hand);
                }
                Ok(ControlReply::ok(id))
            }
            ControlCommand::Instruction { event } => {
                if let Some(handle) = lock(&self.sim).as_ref() {
                    lock(&handle.sim).instruction(event);
                    return Ok(ControlReply::ok(id));
                }
                let t = lock(&self.session).newest().unwrap_or(Timestamp::ZERO);
                let record = Record::Instruction(cogload_core::instructions::InstructionEvent {
                    t,
                    kind: event,
                });
                let replies = self.ingest(record);
                match replies.first().map(|r| &r.body) {
                    Some(IngestOutcome::Ack { seq }) => {
                        let mut reply = ControlReply::ok(id);
                        reply.seq = Some(*seq);
                        Ok(reply)
                    }
                    Some(IngestOutcome::Rejected { reason })
                    | Some(IngestOutcome::SessionError { reason }) => {
                        Err(ControlReply::error(id, reason.clone()))
                    }
                    _ => Err(ControlReply::error(id, "instruction not accepted")),
                }
            }
        }
    }
}

fn snapshot(session: &LiveSession) -> SessionSnapshot {
    SessionSnapshot {
        session: session.id().to_string(),
        phase: session.phase(),
        tick: session.latest().cloned(),
    }
}

async fn drive_simulator(slot: Arc<Slot>, sim: Arc<Mutex<LiveSimulator>>, frame_rate: f64) {
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / frame_rate));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let records = lock(&sim).next_frame();
        for r in records {
            for reply in slot.ingest(r) {
                if !matches!(reply.body, IngestOutcome::Ack { .. }) {
                    tracing::warn!(?reply, "simulator record not accepted");
                }
            }
        }
    }
}

async fn broadcast_loop(slot: Arc<Slot>, hz: f64) {
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        interval.tick().await;
        slot.broadcast();
    }
}

/// Shared service state. Must be created inside a Tokio runtime.
#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    slots: Arc<Mutex<BTreeMap<String, Arc<Slot>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let state = Self {
            config: Arc::new(config),
            slots: Arc::new(Mutex::new(BTreeMap::new())),
        };
        state.slot(None);
        state
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// The slot for a `session` query parameter, created on first use.
    pub fn slot(&self, session: Option<&str>) -> Arc<Slot> {
        let key = if self.config.multi_session {
            session.unwrap_or(DEFAULT_SESSION)
        } else {
            DEFAULT_SESSION
        };
        let mut slots = lock(&self.slots);
        if let Some(slot) = slots.get(key) {
            return Arc::clone(slot);
        }
        let session = LiveSession::new(
            key,
            self.config.session.clone(),
            self.config.layout.clone(),
            self.config.reorder_window,
        );
        let slot = Arc::new(Slot::new(
            session,
            self.config.warning_rearm,
            self.config.reorder_window,
        ));
        tokio::spawn(broadcast_loop(Arc::clone(&slot), self.config.broadcast_hz));
        slots.insert(key.to_string(), Arc::clone(&slot));
        slot
    }
}

#[derive(Debug, Default, Deserialize)]
struct Params {
    session: Option<String>,
    token: Option<String>,
}

async fn require_token(
    State(state): State<AppState>,
    Query(params): Query<Params>,
    request: Request,
    next: Next,
) -> Response {
    if let Some(expected) = &state.config.token {
        let bearer = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        let given = params.token.as_deref().or(bearer);
        if given != Some(expected.as_str()) {
            let body = ControlReply::error("", "missing or wrong token");
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(request).await
}

async fn ingest_ws(
    State(state): State<AppState>,
    Query(params): Query<Params>,
    ws: WebSocketUpgrade,
) -> Response {
    let slot = state.slot(params.session.as_deref());
    ws.on_upgrade(move |socket| ingest_socket(slot, socket))
}

async fn ingest_socket(slot: Arc<Slot>, mut socket: WebSocket) {
    while let Some(Ok(message)) = socket.recv().await {
        let text = match message {
            Message::Text(text) => text,
            Message::Close(_) => break,
            _ => continue,
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            for reply in slot.ingest_line(line) {
                let json = serde_json::to_string(&reply).expect("reply serializes");
                if socket.send(Message::Text(json.into())).await.is_err() {
                    return;
                }
            }
        }
    }
}

async fn feedback_ws(
    State(state): State<AppState>,
    Query(params): Query<Params>,
    ws: WebSocketUpgrade,
) -> Response {
    let slot = state.slot(params.session.as_deref());
    ws.on_upgrade(move |socket| feedback_socket(slot, socket))
}

async fn feedback_socket(slot: Arc<Slot>, mut socket: WebSocket) {
    let mut rx = slot.subscribe();
    let mut first = rx.borrow_and_update().clone();
    first.snapshot = true;
    let json = serde_json::to_string(&first).expect("feedback serializes");
    if socket.send(Message::Text(json.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            changed = rx.changed() => {
                if changed.is_err() {
                    return;
                }
                let json = serde_json::to_string(&*rx.borrow_and_update()).expect("feedback serializes");
                if socket.send(Message::Text(json.into())).await.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => {
                match incoming {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    _ => {}
                }
            }
        }
    }
}

async fn control(
    State(state): State<AppState>,
    Query(params): Query<Params>,
    body: String,
) -> Response {
    let slot = state.slot(params.session.as_deref());
    let request: ControlRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => {
            let id = slot.snapshot().session;
            return (
                StatusCode::BAD_REQUEST,
                Json(ControlReply::error(id, e.to_string())),
            )
                .into_response();
        }
    };
    if request.v != crate::feedback::WIRE_VERSION {
        let id = slot.snapshot().session;
        let reply = ControlReply::error(id, format!("unsupported message version {}", request.v));
        return (StatusCode::BAD_REQUEST, Json(reply)).into_response();
    }
    match slot.control(request.command) {
        Ok(reply) => Json(reply).into_response(),
        Err(reply) => (StatusCode::CONFLICT, Json(reply)).into_response(),
    }
}

async fn state_endpoint(
    State(state): State<AppState>,
    Query(params): Query<Params>,
) -> Json<FeedbackMessage> {
    Json(state.slot(params.session.as_deref()).latest())
}

/// Routes: `/ingest` and `/feedback` (WebSocket), `/control` (POST), `/state`
/// (GET), and the asset directory at `/` when configured.
pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/ingest", get(ingest_ws))
        .route("/feedback", get(feedback_ws))
        .route("/control", post(control))
        .route("/state", get(state_endpoint))
        .layer(middleware::from_fn_with_state(state.clone(), require_token));
    let app = match &state.config.assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { (StatusCode::NOT_FOUND, Body::from("not found")) }),
    };
    app.with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    config: ServiceConfig,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(AppState::new(config));
    tracing::info!(addr = ?listener.local_addr().ok(), "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}
