//! HTTP session service: a human plays the simulated user's role.
//!
//! ```text
//! POST /api/sessions                    {user_id?, mode, seed?, target_item?}  → 201
//! POST /api/sessions/{id}/feedback      {type, payload?}                       → 200
//! GET  /api/sessions/{id}/transcript                                           → 200
//! ```
//!
//! Every body carries `schema_version`; errors are `{code, message}`.
//! Conversations run through the same [`apply_turn`]/[`next_action`] engine
//! as the simulator, so a scripted client reproduces `run_session` exactly.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ear_core::action::{PolicyNet, SelectMode};
use ear_core::agents::EarAgent;
use ear_core::estimation::{Embeddings, FmModel};
use ear_core::reflection::ModelOverlay;
use ear_core::simulator::{
    apply_turn, next_action, session_rngs, Action, Env, Feedback, Opening, QuestionMode, Session, SessionStatus,
    SessionTranscript,
};
use ear_core::{AttrId, ItemId, ParentId, UserId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::harness::Dataset;

pub const API_SCHEMA_VERSION: u32 = 1;
const TOMBSTONE_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub solicit_attribute: String,
    pub solicit_parent: String,
    pub ask_attribute: String,
    pub ask_parent: String,
    pub recommend: String,
    pub success: String,
    pub quit: String,
}

pub const DEFAULT_TEMPLATES: &str = include_str!("../configs/templates.toml");

impl Default for Templates {
    fn default() -> Self {
        toml::from_str(DEFAULT_TEMPLATES).expect("bundled templates parse")
    }
}

impl Templates {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut s = template.to_string();
    for (k, v) in vars {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    pub max_sessions: usize,
    pub templates: Templates,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { idle_timeout: Duration::from_secs(30 * 60), max_sessions: 1024, templates: Templates::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Named {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentEntry {
    pub id: u32,
    pub name: String,
    pub children: Vec<Named>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCard {
    pub id: u32,
    pub name: String,
    pub attributes: Vec<Named>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SystemAction {
    SolicitAttribute { text: String, attributes: Vec<Named> },
    SolicitParent { text: String, parents: Vec<ParentEntry> },
    AskAttribute { text: String, attribute: Named },
    AskParent { text: String, parent: Named, children: Vec<Named> },
    Recommend { text: String, items: Vec<ItemCard> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub user_id: String,
    pub cold_start: bool,
    pub mode: QuestionMode,
    pub system_action: SystemAction,
    pub session_status: SessionStatus,
    pub turn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub system_action: Option<SystemAction>,
    pub session_status: SessionStatus,
    pub turn: usize,
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { schema_version: API_SCHEMA_VERSION, code: self.code.to_string(), message: self.message };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    user_id: Option<Value>,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    /// The item a scripted user is after; enables target-rank tracing.
    #[serde(default)]
    target_item: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    payload: Value,
}

struct LiveSession {
    user: UserId,
    mode: QuestionMode,
    agent: EarAgent,
    target: Option<ItemId>,
    session: Option<Session>,
    pending: Option<Action>,
    opening_transcript: SessionTranscript,
}

struct Slot {
    last_active: Mutex<Instant>,
    inner: tokio::sync::Mutex<LiveSession>,
}

impl Slot {
    fn expired(&self, timeout: Duration) -> bool {
        self.last_active.lock().expect("clock lock").elapsed() > timeout
    }

    fn touch(&self) {
        *self.last_active.lock().expect("clock lock") = Instant::now();
    }
}

#[derive(Default)]
struct Registry {
    live: HashMap<String, Arc<Slot>>,
    tombstones: HashMap<String, ()>,
    order: VecDeque<String>,
}

impl Registry {
    fn bury(&mut self, id: &str) {
        if self.live.remove(id).is_some() && self.tombstones.insert(id.to_string(), ()).is_none() {
            self.order.push_back(id.to_string());
            while self.order.len() > TOMBSTONE_CAP {
                if let Some(old) = self.order.pop_front() {
                    self.tombstones.remove(&old);
                }
            }
        }
    }
}

pub struct AppState {
    cfg: RunConfig,
    data: Arc<Dataset>,
    fm: Arc<FmModel>,
    policy: Arc<PolicyNet>,
    svc: ServiceConfig,
    mean_user: Vec<f64>,
    registry: Mutex<Registry>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(cfg: RunConfig, data: Arc<Dataset>, fm: Arc<FmModel>, policy: Arc<PolicyNet>, svc: ServiceConfig) -> Arc<Self> {
        let mut mean_user = vec![0.0; fm.dim()];
        let users: Vec<UserId> = data.train.active_users().collect();
        for &u in &users {
            if let Ok(row) = fm.user(u) {
                for (m, x) in mean_user.iter_mut().zip(row) {
                    *m += x;
                }
            }
        }
        if !users.is_empty() {
            mean_user.iter_mut().for_each(|m| *m /= users.len() as f64);
        }
        Arc::new(AppState {
            cfg,
            data,
            fm,
            policy,
            svc,
            mean_user,
            registry: Mutex::new(Registry::default()),
            counter: AtomicU64::new(0),
        })
    }

    fn env(&self) -> Env<'_> {
        self.data.env(&self.cfg)
    }

    /// Moves idle sessions to the expired set; returns how many.
    pub fn sweep(&self) -> usize {
        let mut reg = self.registry.lock().expect("registry lock");
        let dead: Vec<String> =
            reg.live.iter().filter(|(_, s)| s.expired(self.svc.idle_timeout)).map(|(k, _)| k.clone()).collect();
        for id in &dead {
            reg.bury(id);
        }
        dead.len()
    }

    pub fn live_sessions(&self) -> usize {
        self.registry.lock().expect("registry lock").live.len()
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        let mut reg = self.registry.lock().expect("registry lock");
        if let Some(slot) = reg.live.get(id).cloned() {
            if slot.expired(self.svc.idle_timeout) {
                reg.bury(id);
                return Err(gone(id));
            }
            return Ok(slot);
        }
        if reg.tombstones.contains_key(id) {
            return Err(gone(id));
        }
        Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`")))
    }

    fn attr(&self, a: AttrId) -> Named {
        Named { id: a.0, name: self.data.names.attrs.original(a.0).unwrap_or_default().to_string() }
    }

    fn solicitation(&self, mode: QuestionMode) -> SystemAction {
        let t = &self.svc.templates;
        match (mode, self.data.taxonomy.as_ref()) {
            (QuestionMode::Enumerated, Some(tax)) => SystemAction::SolicitParent {
                text: t.solicit_parent.clone(),
                parents: tax
                    .parents()
                    .map(|(j, children)| ParentEntry {
                        id: j.0,
                        name: self.data.names.parents.original(j.0).unwrap_or_default().to_string(),
                        children: children.iter().map(|&c| self.attr(c)).collect(),
                    })
                    .collect(),
            },
            _ => SystemAction::SolicitAttribute {
                text: t.solicit_attribute.clone(),
                attributes: (0..self.data.catalog.n_attrs()).map(|a| self.attr(AttrId::new(a))).collect(),
            },
        }
    }

    fn render(&self, action: &Action) -> Result<SystemAction, ApiError> {
        let t = &self.svc.templates;
        Ok(match action {
            Action::Ask(p) => {
                let attribute = self.attr(*p);
                SystemAction::AskAttribute { text: fill(&t.ask_attribute, &[("attribute", &attribute.name)]), attribute }
            }
            Action::AskParent(j) => {
                let tax = self.data.taxonomy.as_ref().ok_or_else(|| ApiError::internal("no taxonomy loaded"))?;
                let name = self.data.names.parents.original(j.0).unwrap_or_default().to_string();
                let children = tax.children(*j).map_err(|e| ApiError::internal(e.to_string()))?;
                SystemAction::AskParent {
                    text: fill(&t.ask_parent, &[("parent", &name)]),
                    parent: Named { id: j.0, name },
                    children: children.iter().map(|&c| self.attr(c)).collect(),
                }
            }
            Action::Recommend(items) => SystemAction::Recommend {
                text: fill(&t.recommend, &[("count", &items.len().to_string())]),
                items: items
                    .iter()
                    .map(|&v| ItemCard {
                        id: v.0,
                        name: self.data.names.items.original(v.0).unwrap_or_default().to_string(),
                        attributes: self.data.catalog.attrs_of(v).unwrap_or(&[]).iter().map(|&a| self.attr(a)).collect(),
                    })
                    .collect(),
            },
        })
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/api/sessions", post(create_session))
            .route("/api/sessions/{id}/feedback", post(post_feedback))
            .route("/api/sessions/{id}/transcript", get(get_transcript))
            .with_state(self.clone())
    }
}

fn gone(id: &str) -> ApiError {
    ApiError::new(StatusCode::GONE, "expired", format!("session `{id}` expired"))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    let bytes: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn parse_mode(mode: Option<&str>, configured: QuestionMode) -> Result<QuestionMode, ApiError> {
    let mode = match mode {
        None => return Ok(configured),
        Some("binary") => QuestionMode::Binary,
        Some("enumerated") => QuestionMode::Enumerated,
        Some(other) => return Err(ApiError::bad_request(format!("invalid mode `{other}` (expected binary or enumerated)"))),
    };
    if mode != configured {
        return Err(ApiError::bad_request(format!("mode `{mode:?}` is not served; the loaded policy was trained for {configured:?}")));
    }
    Ok(mode)
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let mode = parse_mode(req.mode.as_deref(), app.cfg.sim.mode)?;
    let (user, cold_start, user_name) = match &req.user_id {
        None | Some(Value::Null) => (UserId::new(app.fm.n_users()), true, String::new()),
        Some(v) => {
            let name = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                _ => return Err(ApiError::bad_request("user_id must be a string or an integer")),
            };
            match app.data.names.users.get(&name) {
                Some(u) if (u as usize) < app.fm.n_users() => (UserId(u), false, name),
                _ => (UserId::new(app.fm.n_users()), true, name),
            }
        }
    };
    if let Some(t) = req.target_item {
        if t as usize >= app.data.catalog.n_items() {
            return Err(ApiError::bad_request(format!("target_item {t} out of range")));
        }
    }
    let mut overlay = ModelOverlay::new(app.fm.clone());
    if cold_start {
        overlay = overlay.with_user_row(user, app.mean_user.clone()).map_err(|e| ApiError::internal(e.to_string()))?;
    }
    let n = app.counter.fetch_add(1, Ordering::Relaxed);
    let seed = req.seed.unwrap_or_else(|| app.cfg.seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (_, agent_rng) = session_rngs(seed, 0);
    let agent = EarAgent::new(app.policy.clone(), overlay, Some(app.cfg.reflection), SelectMode::Greedy, agent_rng);
    let live = LiveSession {
        user,
        mode,
        agent,
        target: req.target_item.map(ItemId),
        session: None,
        pending: None,
        opening_transcript: SessionTranscript::pending(user, mode),
    };
    let id = uuid::Uuid::new_v4().to_string();
    {
        let mut reg = app.registry.lock().expect("registry lock");
        if reg.live.len() >= app.svc.max_sessions {
            let dead: Vec<String> =
                reg.live.iter().filter(|(_, s)| s.expired(app.svc.idle_timeout)).map(|(k, _)| k.clone()).collect();
            for d in &dead {
                reg.bury(d);
            }
        }
        if reg.live.len() >= app.svc.max_sessions {
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "capacity", format!("session cap of {} reached", app.svc.max_sessions)));
        }
        let slot = Slot { last_active: Mutex::new(Instant::now()), inner: tokio::sync::Mutex::new(live) };
        reg.live.insert(id.clone(), Arc::new(slot));
    }
    let resp = CreateResponse {
        schema_version: API_SCHEMA_VERSION,
        session_id: id,
        user_id: user_name,
        cold_start,
        mode,
        system_action: app.solicitation(mode),
        session_status: SessionStatus::Live,
        turn: 0,
    };
    Ok((StatusCode::CREATED, Json(resp)))
}

fn payload_u32(payload: &Value, key: &str) -> Result<u32, ApiError> {
    payload
        .get(key)
        .and_then(Value::as_u64)
        .and_then(|x| u32::try_from(x).ok())
        .ok_or_else(|| ApiError::bad_request(format!("payload.{key} must be a non-negative integer id")))
}

fn payload_ids(payload: &Value, key: &str) -> Result<BTreeSet<AttrId>, ApiError> {
    let list = payload.get(key).and_then(Value::as_array).ok_or_else(|| ApiError::bad_request(format!("payload.{key} must be an array of attribute ids")))?;
    list.iter()
        .map(|x| {
            x.as_u64()
                .and_then(|x| u32::try_from(x).ok())
                .map(AttrId)
                .ok_or_else(|| ApiError::bad_request(format!("payload.{key} holds a non-id value `{x}`")))
        })
        .collect()
}

fn pending_name(p: &Option<Action>, started: bool) -> &'static str {
    match p {
        _ if !started => "an opening attribute (init_attr)",
        Some(Action::Ask(_)) => "an attribute answer (attr_yes or attr_no)",
        Some(Action::AskParent(_)) => "a children selection",
        Some(Action::Recommend(_)) => "accept or reject",
        None => "nothing",
    }
}

fn core_err(e: ear_core::Error) -> ApiError {
    match e {
        ear_core::Error::InvalidParameter(m) => ApiError::bad_request(m),
        ear_core::Error::UnknownAttribute(a) => ApiError::bad_request(format!("attribute {a} out of range")),
        ear_core::Error::UnknownParent(j) => ApiError::bad_request(format!("parent {j} out of range")),
        other => ApiError::internal(other.to_string()),
    }
}

impl AppState {
    fn handle(&self, live: &mut LiveSession, req: FeedbackRequest) -> Result<Option<String>, ApiError> {
        let env = self.env();
        let t = &self.svc.templates;
        if req.kind == "quit" {
            if let Some(s) = live.session.as_mut() {
                if !s.is_live() {
                    return Err(ApiError::conflict("session is already over"));
                }
                s.quit();
            } else {
                live.opening_transcript.status = SessionStatus::Quit;
            }
            live.pending = None;
            return Ok(Some(t.quit.clone()));
        }
        if live.session.is_none() {
            if live.opening_transcript.status != SessionStatus::Live {
                return Err(ApiError::conflict("session is already over"));
            }
            if req.kind != "init_attr" {
                return Err(ApiError::conflict(format!("`{}` does not answer the current system action; expected {}", req.kind, pending_name(&None, false))));
            }
            let opening = match live.mode {
                QuestionMode::Binary => Opening::Attribute(AttrId(payload_u32(&req.payload, "attribute")?)),
                QuestionMode::Enumerated => {
                    Opening::Parent { parent: ParentId(payload_u32(&req.payload, "parent")?), children: payload_ids(&req.payload, "children")? }
                }
            };
            let mut session = Session::start(live.user, opening, env.catalog, env.taxonomy, env.sim).map_err(core_err)?;
            if let Some(target) = live.target {
                session.set_target(target);
            }
            ear_core::agents::Agent::begin(&mut live.agent, &session, &env).map_err(core_err)?;
            live.session = Some(session);
        } else {
            let session = live.session.as_mut().expect("checked above");
            if !session.is_live() {
                return Err(ApiError::conflict("session is already over"));
            }
            let action = live.pending.clone().ok_or_else(|| ApiError::internal("live session without a pending action"))?;
            let feedback = match (req.kind.as_str(), &action) {
                ("attr_yes", Action::Ask(_)) => Feedback::Yes,
                ("attr_no", Action::Ask(_)) => Feedback::No,
                ("children", Action::AskParent(_)) => Feedback::Children(payload_ids(&req.payload, "children")?),
                ("accept", Action::Recommend(_)) => Feedback::Accept,
                ("reject", Action::Recommend(_)) => Feedback::Reject,
                ("init_attr" | "attr_yes" | "attr_no" | "children" | "accept" | "reject", _) => {
                    return Err(ApiError::conflict(format!(
                        "`{}` does not answer the current system action; expected {}",
                        req.kind,
                        pending_name(&live.pending, true)
                    )))
                }
                (other, _) => return Err(ApiError::bad_request(format!("unknown feedback type `{other}`"))),
            };
            apply_turn(&mut live.agent, session, action, feedback, &env).map_err(core_err)?;
        }
        let session = live.session.as_ref().expect("started");
        live.pending = None;
        match session.status() {
            SessionStatus::Live => {
                live.pending = Some(next_action(&mut live.agent, session, &env).map_err(core_err)?);
                Ok(None)
            }
            SessionStatus::Success => Ok(Some(t.success.clone())),
            SessionStatus::Quit => Ok(Some(t.quit.clone())),
        }
    }
}

const FEEDBACK_TYPES: [&str; 7] = ["init_attr", "attr_yes", "attr_no", "children", "accept", "reject", "quit"];

async fn post_feedback(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<FeedbackResponse>, ApiError> {
    let slot = app.slot(&id)?;
    let req: FeedbackRequest = parse_body(&body)?;
    if !FEEDBACK_TYPES.contains(&req.kind.as_str()) {
        return Err(ApiError::bad_request(format!("unknown feedback type `{}`", req.kind)));
    }
    let mut live = slot.inner.lock().await;
    slot.touch();
    let message = app.handle(&mut live, req)?;
    let (status, turn, candidates) = match &live.session {
        Some(s) => (s.status(), s.turn(), s.candidates().len()),
        None => (live.opening_transcript.status, 0, app.data.catalog.n_items()),
    };
    let system_action = match &live.pending {
        Some(a) => Some(app.render(a)?),
        None => None,
    };
    Ok(Json(FeedbackResponse { schema_version: API_SCHEMA_VERSION, session_id: id, system_action, session_status: status, turn, candidates, message }))
}

async fn get_transcript(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionTranscript>, ApiError> {
    let slot = app.slot(&id)?;
    let live = slot.inner.lock().await;
    slot.touch();
    Ok(Json(match &live.session {
        Some(s) => s.transcript().clone(),
        None => live.opening_transcript.clone(),
    }))
}

/// Serves until Ctrl-C, sweeping idle sessions once a minute.
pub async fn serve(app: Arc<AppState>, bind: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::warn!("listening on http://{}", listener.local_addr()?);
    let sweeper = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.sweep();
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    });
    axum::serve(listener, app.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
