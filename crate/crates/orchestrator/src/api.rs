//! JSON session API used by the study client.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cts_core::agent::Checkpoint;
use cts_core::encoding::EncoderCache;
use cts_core::graph::DatasetSplit;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::live::{AgentContext, AgentTurn, EndReason, LiveError};
use crate::run::{now_ms, Dataset, RunDir};
use crate::session::{
    assign_goals, categories_for, session_id, AuditLog, Category, DialogSurvey, FinalSurvey, GoalPools, GoalTexts,
    Message, SessionState, Speaker, Stage,
};

type Shared = Arc<tokio::sync::Mutex<SessionState>>;

pub struct AppState {
    pub ctx: Arc<AgentContext>,
    pub checkpoint_id: String,
    pub bank: Arc<DatasetSplit>,
    pub pools: GoalPools,
    pub goal_texts: GoalTexts,
    pub salt: String,
    pub dialogs_per_session: usize,
    pub audit: AuditLog,
    sessions: Mutex<HashMap<String, Shared>>,
    created: AtomicUsize,
}

impl AppState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ctx: AgentContext,
        checkpoint_id: String,
        bank: Arc<DatasetSplit>,
        goal_texts: GoalTexts,
        salt: String,
        dialogs_per_session: usize,
        audit: AuditLog,
    ) -> anyhow::Result<Self> {
        let pools = GoalPools::build(&ctx.graph, &bank)?;
        Ok(AppState {
            ctx: Arc::new(ctx),
            checkpoint_id,
            bank,
            pools,
            goal_texts,
            salt,
            dialogs_per_session,
            audit,
            sessions: Mutex::new(HashMap::new()),
            created: AtomicUsize::new(0),
        })
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "wrong_stage", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", r.body_text())
    }
}

impl From<LiveError> for ApiError {
    fn from(e: LiveError) -> Self {
        match e {
            LiveError::Ended => ApiError::conflict(e.to_string()),
            LiveError::EmptyUtterance => ApiError::invalid(e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub username: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyBody {
    /// Must name the current dialog when given.
    #[serde(default)]
    pub dialog: Option<usize>,
    pub perceived_length: u8,
    pub satisfaction: u8,
}

#[derive(Serialize)]
pub struct DialogView<'a> {
    pub index: usize,
    pub category: Category,
    pub goal_text: &'a str,
    pub complete: bool,
    pub ended: Option<EndReason>,
    pub awaiting_input: bool,
    pub survey: Option<DialogSurvey>,
    pub messages: &'a [Message],
}

#[derive(Serialize)]
pub struct SessionView<'a> {
    pub session_id: &'a str,
    pub resumed: bool,
    pub stage: Stage,
    pub current: usize,
    pub dialogs: Vec<DialogView<'a>>,
}

fn view(s: &SessionState, resumed: bool) -> SessionView<'_> {
    SessionView {
        session_id: &s.session_id,
        resumed,
        stage: s.stage(),
        current: s.current,
        dialogs: s
            .dialogs
            .iter()
            .map(|d| DialogView {
                index: d.index,
                category: d.goal.category,
                goal_text: &d.goal.text,
                complete: d.complete(),
                ended: d.state.ended,
                awaiting_input: d.state.awaiting.is_some(),
                survey: d.survey,
                messages: &d.messages,
            })
            .collect(),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, ApiError> {
    serde_json::to_value(v).map_err(ApiError::internal)
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(body) = body?;
    let username = body.username.trim();
    if username.is_empty() {
        return Err(ApiError::invalid("username must not be empty"));
    }
    let id = session_id(&app.salt, username);
    let (shared, created) = {
        let mut sessions = app.sessions.lock().expect("sessions lock");
        match sessions.get(&id) {
            Some(s) => (s.clone(), false),
            None => {
                let k = app.created.fetch_add(1, Ordering::SeqCst);
                let cats = categories_for(k, app.dialogs_per_session);
                let goals = assign_goals(&app.ctx.graph, &app.bank, &app.pools, &app.goal_texts, &cats, &id);
                let state = SessionState::new(id.clone(), app.checkpoint_id.clone(), goals, &app.ctx);
                // logged before the session becomes visible to other requests
                let goals: Vec<_> = state.dialogs.iter().map(|d| &d.goal).collect();
                app.audit
                    .append("session_created", &id, &json!({"checkpoint": state.checkpoint_id, "goals": goals}))
                    .map_err(ApiError::internal)?;
                let shared = Arc::new(tokio::sync::Mutex::new(state));
                sessions.insert(id.clone(), shared.clone());
                (shared, true)
            }
        }
    };
    let s = shared.lock().await;
    if !created {
        app.audit
            .append("session_resumed", &id, &json!({"stage": s.stage(), "current": s.current}))
            .map_err(ApiError::internal)?;
    }
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(to_value(&view(&s, !created))?)))
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    let shared = app.session(&id)?;
    let s = shared.lock().await;
    Ok(Json(to_value(&view(&s, true))?))
}

#[derive(Serialize)]
struct UtteranceReply {
    dialog: usize,
    turns: Vec<AgentTurn>,
    awaiting_input: bool,
    complete: bool,
    ended: Option<EndReason>,
    stage: Stage,
}

async fn post_utterance(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Utterance>, JsonRejection>,
) -> ApiResult<UtteranceReply> {
    let Json(body) = body?;
    let shared = app.session(&id)?;
    let mut guard = shared.lock_owned().await;
    if guard.stage() != Stage::Dialog {
        return Err(ApiError::conflict("no dialog is in progress"));
    }
    let text = body.text.trim().to_owned();
    let ctx = app.ctx.clone();
    // the encoder may block on I/O
    let (guard, turns) = tokio::task::spawn_blocking(move || {
        let s = &mut *guard;
        let d = s.current_dialog().expect("dialog stage");
        let mut state = d.state.clone();
        let result = ctx.respond(&mut state, &body.text);
        if result.is_ok() {
            d.state = state;
            let ts = now_ms();
            d.messages.push(Message {
                speaker: Speaker::User,
                text: body.text.trim().to_owned(),
                turn: None,
                ts_ms: ts,
            });
            if let Ok(turns) = &result {
                d.messages.extend(turns.iter().map(|t| Message {
                    speaker: Speaker::Agent,
                    text: t.text.clone(),
                    turn: Some(t.clone()),
                    ts_ms: ts,
                }));
            }
        }
        (guard, result)
    })
    .await
    .map_err(ApiError::internal)?;
    let turns = turns?;
    let d = &guard.dialogs[guard.current];
    let reply = UtteranceReply {
        dialog: d.index,
        turns,
        awaiting_input: d.state.awaiting.is_some(),
        complete: d.complete(),
        ended: d.state.ended,
        stage: guard.stage(),
    };
    app.audit
        .append(
            "utterance",
            &id,
            &json!({"dialog": d.index, "text": text, "turns": reply.turns, "ended": reply.ended}),
        )
        .map_err(ApiError::internal)?;
    Ok(Json(reply))
}

async fn post_found(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    let shared = app.session(&id)?;
    let mut s = shared.lock().await;
    if s.stage() != Stage::Dialog {
        return Err(ApiError::conflict("no dialog is in progress"));
    }
    s.finish_current(EndReason::Found);
    let d = &s.dialogs[s.current];
    let payload = json!({"dialog": d.index, "goal_shown": d.goal_shown()});
    app.audit.append("found_answer", &id, &payload).map_err(ApiError::internal)?;
    Ok(Json(json!({"dialog": d.index, "stage": s.stage()})))
}

async fn post_survey(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SurveyBody>, JsonRejection>,
) -> ApiResult<serde_json::Value> {
    let Json(body) = body?;
    let shared = app.session(&id)?;
    let mut s = shared.lock().await;
    match s.stage() {
        Stage::DialogSurvey => {}
        Stage::Dialog => return Err(ApiError::conflict("the dialog is not complete yet")),
        _ => return Err(ApiError::conflict("all dialog surveys are already submitted")),
    }
    if body.dialog.is_some_and(|d| d != s.current) {
        return Err(ApiError::conflict(format!("the current dialog is {}", s.current)));
    }
    let survey = DialogSurvey {
        perceived_length: body.perceived_length,
        satisfaction: body.satisfaction,
    };
    survey.validate().map_err(ApiError::invalid)?;
    let index = s.current;
    s.dialogs[index].survey = Some(survey);
    s.current += 1;
    app.audit
        .append("dialog_survey", &id, &json!({"dialog": index, "survey": survey}))
        .map_err(ApiError::internal)?;
    Ok(Json(json!({"dialog": index, "stage": s.stage(), "current": s.current})))
}

async fn post_final_survey(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<FinalSurvey>, JsonRejection>,
) -> ApiResult<serde_json::Value> {
    let Json(body) = body?;
    let shared = app.session(&id)?;
    let mut s = shared.lock().await;
    match s.stage() {
        Stage::FinalSurvey => {}
        Stage::Done => return Err(ApiError::conflict("the final survey is already submitted")),
        _ => return Err(ApiError::conflict("complete every dialog and its survey first")),
    }
    body.validate().map_err(ApiError::invalid)?;
    app.audit.append("final_survey", &id, &body).map_err(ApiError::internal)?;
    s.final_survey = Some(body);
    Ok(Json(json!({"stage": s.stage()})))
}

async fn get_transcript(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    let shared = app.session(&id)?;
    let s = shared.lock().await;
    let mut value = to_value(&*s)?;
    value["stage"] = to_value(&s.stage())?;
    value["goal_shown"] = s.dialogs.iter().map(|d| d.goal_shown()).collect();
    Ok(Json(value))
}

async fn health(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "checkpoint": app.checkpoint_id}))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/utterances", post(post_utterance))
        .route("/api/sessions/{id}/found", post(post_found))
        .route("/api/sessions/{id}/surveys", post(post_survey))
        .route("/api/sessions/{id}/final-survey", post(post_final_survey))
        .route("/api/sessions/{id}/transcript", get(get_transcript))
        .with_state(state)
}

fn load_salt(config: &RunConfig, run: &RunDir) -> anyhow::Result<String> {
    if let Ok(salt) = std::env::var(&config.serve.salt_env) {
        if !salt.is_empty() {
            return Ok(salt);
        }
    }
    let path = run.root.join("session_salt");
    if let Ok(salt) = std::fs::read_to_string(&path) {
        return Ok(salt.trim().to_owned());
    }
    let mut bytes = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut bytes);
    let salt = hex::encode(bytes);
    std::fs::write(&path, &salt).with_context(|| format!("writing {}", path.display()))?;
    Ok(salt)
}

/// Application state for a run: checkpoint policy, test bank goals and the
/// audit log at `logs/sessions.jsonl`.
pub fn build_state(config: &RunConfig, checkpoint: &Path) -> anyhow::Result<AppState> {
    let run = RunDir::create(config)?;
    let ckpt = Checkpoint::<f32>::load(checkpoint)?;
    let net = ckpt.policy_network().clone();
    if net.config.embedding_dim != config.encoder.dim() {
        bail!(
            "checkpoint {} expects {}-dimensional embeddings but the configured encoder produces {}",
            checkpoint.display(),
            net.config.embedding_dim,
            config.encoder.dim()
        );
    }
    let data = Dataset::load(config)?;
    let cache = Arc::new(EncoderCache::new(config.encoder.build()));
    let ctx = AgentContext {
        graph: data.graph.clone(),
        cache,
        policy: Arc::new(net),
        max_turns: config.simulator.max_turns,
    };
    let goal_texts = match &config.serve.goal_texts {
        Some(p) => GoalTexts::load(p)?,
        None => GoalTexts::default(),
    };
    let checkpoint_id = format!(
        "{}@{}",
        checkpoint.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        ckpt.turn
    );
    let audit = AuditLog::open(&run.logs().join("sessions.jsonl"))?;
    AppState::new(
        ctx,
        checkpoint_id,
        data.test.clone(),
        goal_texts,
        load_salt(config, &run)?,
        config.serve.dialogs_per_session,
        audit,
    )
}

pub async fn serve(config: &RunConfig, checkpoint: &Path, addr: Option<&str>) -> anyhow::Result<()> {
    let state = Arc::new(build_state(config, checkpoint)?);
    let addr = addr.unwrap_or(&config.serve.addr);
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("serving sessions on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
