//! HTTP session API for an annotator steering active-learning episodes.
//!
//! Every session is a JSON file under `<output_dir>/sessions`, rewritten atomically on
//! each change, so a restarted service resumes where it stopped. Mutations of one
//! session are serialized by a per-session lock; refits run on the blocking pool.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex as SyncMutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use genkb_core::active::{
    begin_session, complete_session, ActiveError, EpisodeConfig, InferredFact, ProposalMode, Provenance,
    QuerySession, SelectionMethod,
};
use genkb_core::embed::EmbeddingModel;
use genkb_core::guidance::{expand_then_train, schema_consistent};
use genkb_core::{Background, KnowledgeBase, NamedTriple, QuantLabel};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::files::write_json;
use crate::prompt::render_question;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Proposing,
    AwaitingAnnotation,
    Refitting,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub entity: String,
    pub mode: Option<String>,
    pub budget: Option<usize>,
    pub selection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub entity: String,
    pub status: SessionStatus,
    /// Settings the session was created with; refits reuse them.
    pub config: EpisodeConfig,
    /// Absent while proposing.
    pub session: Option<QuerySession>,
    pub inferred: Vec<InferredFact>,
    /// Why the last refit failed; a new refit request retries.
    pub error: Option<String>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub fact_id: String,
    pub question: String,
    pub triple: NamedTriple,
    pub options: Vec<QuantLabel>,
    /// Estimated probability that the fact holds.
    pub p: f64,
    pub answer: Option<QuantLabel>,
}

/// What GET returns: the record plus the rendered question cards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub record: SessionRecord,
    pub questions: Vec<Question>,
    pub answered: usize,
    pub pending: usize,
}

impl SessionRecord {
    fn view(&self) -> SessionView {
        let questions: Vec<Question> = match &self.session {
            Some(s) => s
                .selected_facts()
                .map(|(id, c)| {
                    let t = c.triple(&s.entity);
                    Question {
                        question: render_question(QuantLabel::All, &t),
                        answer: s.annotation(&id),
                        fact_id: id,
                        triple: t,
                        options: QuantLabel::ALL.to_vec(),
                        p: c.p,
                    }
                })
                .collect(),
            None => Vec::new(),
        };
        let answered = questions.iter().filter(|q| q.answer.is_some()).count();
        SessionView {
            record: self.clone(),
            pending: questions.len() - answered,
            answered,
            questions,
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// An error response: status plus a JSON body with at least `error`.
#[derive(Debug)]
pub struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(status, json!({ "error": msg.into() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type Shared = Arc<Mutex<SessionRecord>>;

struct Inner {
    kb: KnowledgeBase,
    background: Background,
    snapshot: EmbeddingModel,
    episode: EpisodeConfig,
    dir: PathBuf,
    sessions: SyncMutex<BTreeMap<String, Shared>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Loads inputs and the embedding snapshot (the saved model when present,
    /// otherwise trained now), then every persisted session. Sessions interrupted
    /// while proposing are proposed again; interrupted refits wait for
    /// [`AppState::resume`].
    pub fn open(cfg: &RunConfig) -> Result<Self, CliError> {
        let kb = cfg.load_kb()?;
        let background = cfg.load_background()?;
        let episode = cfg.episode_config();
        let model_path = cfg.model_path();
        let snapshot = if model_path.is_file() {
            EmbeddingModel::load(&model_path)?
        } else {
            log::info!("no saved model at {}; training the snapshot", model_path.display());
            expand_then_train(&kb, &background, &episode.train, &episode.expansion)?.model
        };
        let dir = cfg.output_dir.join("sessions");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let state = AppState(Arc::new(Inner {
            kb,
            background,
            snapshot,
            episode,
            dir,
            sessions: SyncMutex::new(BTreeMap::new()),
        }));
        state.load_sessions()?;
        Ok(state)
    }

    fn load_sessions(&self) -> Result<(), CliError> {
        let dir = &self.0.dir;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let mut rec: SessionRecord =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            if rec.status == SessionStatus::Proposing {
                match self.propose(&rec.entity, &rec.config) {
                    Ok(s) => {
                        rec.session = Some(s);
                        rec.status = SessionStatus::AwaitingAnnotation;
                        rec.updated_ms = now_ms();
                        self.persist(&rec)?;
                    }
                    Err(e) => {
                        log::warn!("dropping session {}: {e}", rec.id);
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                }
            }
            log::info!("resumed session {} ({:?})", rec.id, rec.status);
            self.0.sessions.lock().expect("session map").insert(rec.id.clone(), Arc::new(Mutex::new(rec)));
        }
        Ok(())
    }

    /// Restarts refits that were running when the service stopped. Needs a runtime.
    pub async fn resume(&self) {
        let all: Vec<Shared> = self.0.sessions.lock().expect("session map").values().cloned().collect();
        for shared in all {
            let rec = shared.lock().await;
            if rec.status == SessionStatus::Refitting && rec.error.is_none() {
                log::info!("restarting refit of {}", rec.id);
                self.spawn_refit(shared.clone(), &rec);
            }
        }
    }

    pub fn session_dir(&self) -> &std::path::Path {
        &self.0.dir
    }

    fn persist(&self, rec: &SessionRecord) -> Result<(), CliError> {
        write_json(&self.0.dir.join(format!("{}.json", rec.id)), rec)
    }

    fn propose(&self, entity: &str, config: &EpisodeConfig) -> Result<QuerySession, ActiveError> {
        begin_session(entity, &self.0.kb, &self.0.background, Some(&self.0.snapshot), config)
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.0
            .sessions
            .lock()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id:?}")))
    }

    fn spawn_refit(&self, shared: Shared, rec: &SessionRecord) {
        let session = rec.session.clone().expect("refitting sessions have been proposed");
        let config = rec.config.clone();
        let state = self.clone();
        tokio::spawn(async move {
            let inner = state.0.clone();
            let job = tokio::task::spawn_blocking(move || {
                complete_session(&session, &inner.kb, &inner.background, &config).map(|o| o.facts)
            });
            let result = job.await;
            let mut rec = shared.lock().await;
            match result {
                Ok(Ok(facts)) => {
                    rec.inferred = boundary_check(facts, &state.0.background);
                    rec.status = SessionStatus::Done;
                }
                Ok(Err(e)) => rec.error = Some(e.to_string()),
                Err(e) => rec.error = Some(format!("refit job failed: {e}")),
            }
            rec.updated_ms = now_ms();
            if let Err(e) = state.persist(&rec) {
                log::error!("cannot persist session {}: {e}", rec.id);
            }
        });
    }
}

/// Drops schema-inconsistent predictions; facts the annotator confirmed are kept.
fn boundary_check(facts: Vec<InferredFact>, bg: &Background) -> Vec<InferredFact> {
    let before = facts.len();
    let kept: Vec<InferredFact> = facts
        .into_iter()
        .filter(|f| {
            f.provenance != Provenance::Factorization
                || schema_consistent(&f.triple.source, &f.triple.relation, &f.triple.target, &bg.schema, &bg.typemap)
                    .consistent
        })
        .collect();
    if kept.len() != before {
        log::error!("boundary check removed {} schema-inconsistent predictions", before - kept.len());
    }
    kept
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/sessions/{id}/refit", post(refit))
        .route("/sessions/{id}/inferred", get(inferred))
        .with_state(state)
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, msg)
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let mut config = state.0.episode.clone();
    if let Some(m) = &req.mode {
        config.mode = m.parse::<ProposalMode>().map_err(bad_request)?;
    }
    if let Some(s) = &req.selection {
        config.selection = s.parse::<SelectionMethod>().map_err(bad_request)?;
    }
    if let Some(b) = req.budget {
        config.budget = b;
    }
    if req.entity.trim().is_empty() {
        return Err(bad_request("entity must not be empty"));
    }
    let now = now_ms();
    let mut rec = SessionRecord {
        id: format!("{:016x}", rand::random::<u64>()),
        entity: req.entity.clone(),
        status: SessionStatus::Proposing,
        config: config.clone(),
        session: None,
        inferred: Vec::new(),
        error: None,
        created_ms: now,
        updated_ms: now,
    };
    state.persist(&rec)?;
    let st = state.clone();
    let entity = req.entity.clone();
    let proposed = tokio::task::spawn_blocking(move || st.propose(&entity, &config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let session = match proposed {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_file(state.0.dir.join(format!("{}.json", rec.id)));
            let status = match e {
                ActiveError::ColdEntity { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::BAD_REQUEST,
            };
            return Err(ApiError::new(status, e.to_string()));
        }
    };
    rec.session = Some(session);
    rec.status = SessionStatus::AwaitingAnnotation;
    rec.updated_ms = now_ms();
    state.persist(&rec)?;
    let view = rec.view();
    state.0.sessions.lock().expect("session map").insert(rec.id.clone(), Arc::new(Mutex::new(rec)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let shared = state.get(&id)?;
    let rec = shared.lock().await;
    Ok(Json(rec.view()))
}

/// Body: `{fact_id: label}`. All entries are validated before any is applied;
/// re-submitting an answer overwrites it.
async fn annotate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<BTreeMap<String, String>>,
) -> Result<Json<SessionView>, ApiError> {
    let shared = state.get(&id)?;
    let mut rec = shared.lock().await;
    if rec.status != SessionStatus::AwaitingAnnotation {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("session is {:?}; annotations are closed", rec.status),
        ));
    }
    let session = rec.session.as_ref().expect("awaiting sessions have been proposed");
    let known: Vec<String> = session.selected_facts().map(|(id, _)| id).collect();
    let mut parsed = Vec::with_capacity(body.len());
    for (fact, label) in &body {
        if !known.contains(fact) {
            return Err(bad_request(format!("unknown fact id {fact:?}")));
        }
        let label: QuantLabel = label
            .parse()
            .map_err(|_| bad_request(format!("invalid label {label:?} for {fact}; expected all, some or none")))?;
        parsed.push((fact.clone(), label));
    }
    let session = rec.session.as_mut().expect("checked above");
    let before = session.annotations.clone();
    for (fact, label) in parsed {
        session.annotate(&fact, label).map_err(|e| bad_request(e.to_string()))?;
    }
    if session.annotations != before {
        rec.updated_ms = now_ms();
        state.persist(&rec)?;
    }
    Ok(Json(rec.view()))
}

async fn refit(State(state): State<AppState>, Path(id): Path<String>) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let shared = state.get(&id)?;
    let mut rec = shared.lock().await;
    match rec.status {
        SessionStatus::AwaitingAnnotation => {
            let pending = rec.session.as_ref().map_or(0, |s| s.pending().len());
            if pending > 0 {
                return Err(ApiError(
                    StatusCode::CONFLICT,
                    json!({ "error": format!("{pending} annotations pending"), "pending": pending }),
                ));
            }
            rec.status = SessionStatus::Refitting;
        }
        SessionStatus::Refitting if rec.error.is_some() => {}
        SessionStatus::Refitting => return Ok((StatusCode::ACCEPTED, Json(json!({ "status": rec.status })))),
        SessionStatus::Done => return Err(ApiError::new(StatusCode::CONFLICT, "session has already been refit")),
        SessionStatus::Proposing => return Err(ApiError::new(StatusCode::CONFLICT, "session is still proposing")),
    }
    rec.error = None;
    rec.updated_ms = now_ms();
    state.persist(&rec)?;
    state.spawn_refit(shared.clone(), &rec);
    Ok((StatusCode::ACCEPTED, Json(json!({ "status": rec.status }))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredView {
    pub status: SessionStatus,
    pub error: Option<String>,
    /// Highest probability first; empty until the refit is done.
    pub facts: Vec<InferredFact>,
}

async fn inferred(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<InferredView>, ApiError> {
    let shared = state.get(&id)?;
    let rec = shared.lock().await;
    Ok(Json(InferredView {
        status: rec.status,
        error: rec.error.clone(),
        facts: boundary_check(rec.inferred.clone(), &state.0.background),
    }))
}

/// Binds `host:port` and serves until interrupted.
pub async fn serve(cfg: &RunConfig, host: &str, port: u16) -> Result<(), CliError> {
    let state = AppState::open(cfg)?;
    state.resume().await;
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|e| CliError::Config(format!("cannot bind {host}:{port}: {e}")))?;
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::io(std::path::Path::new("<socket>"), e))
}
