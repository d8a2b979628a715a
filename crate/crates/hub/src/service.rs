//! JSON-over-HTTP sessions for recording demonstrations by hand.
//!
//! Action indices address visible nodes: `objects[i]` and `goals[j]` of the session view
//! give the entity and goal ids behind index `i` and `j`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use graphmimic::demos::{self, Pair, Source, Trajectory};
use graphmimic::explain::{explain_state, ExplainConfig, ExplanationRecord};
use graphmimic::persist::load_weights;
use graphmimic::worlds::{feasible_actions, reset, step, ActionTuple, Reason, SceneState, WorldSpec};
use serde::{Deserialize, Serialize};

use crate::config::resolve;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Finished,
    Abandoned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: u64,
    pub spec: WorldSpec,
    pub state: SceneState,
    pub pairs: Vec<Pair>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub status: Status,
    pub scene: SceneState,
    /// Entity id behind each object index.
    pub objects: Vec<usize>,
    /// Goal id behind each goal index.
    pub goals: Vec<usize>,
    pub feasible_actions: Vec<ActionTuple>,
    pub goals_filled: u32,
    pub target_count: u32,
    pub steps: usize,
    pub done: bool,
}

impl SessionView {
    fn of(s: &Session) -> Self {
        Self {
            id: s.id,
            status: s.status,
            scene: s.state.clone(),
            objects: s.state.visible_objects(),
            goals: s.state.visible_goals(),
            feasible_actions: feasible_actions(&s.state),
            goals_filled: s.state.goals_filled(),
            target_count: s.state.target_count,
            steps: s.pairs.len(),
            done: s.state.is_done(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionResponse {
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<Reason>,
    pub reward: f32,
    #[serde(flatten)]
    pub session: SessionView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinishResponse {
    pub id: u64,
    pub pairs: usize,
    pub demo_file: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    demo_file: PathBuf,
    snapshots: Option<PathBuf>,
    /// Serializes appends to the demo file.
    demo_lock: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(demo_file: PathBuf, snapshots: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::new(Inner {
                sessions: Mutex::new(HashMap::new()),
                next_id: AtomicU64::new(1),
                demo_file,
                snapshots,
                demo_lock: Mutex::new(()),
            }),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        let unknown = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}"));
        let id: u64 = id.parse().map_err(|_| unknown())?;
        self.inner.sessions.lock().unwrap().get(&id).cloned().ok_or_else(unknown)
    }

    fn snapshot(&self, s: &Session) -> ApiResult<()> {
        let Some(dir) = &self.inner.snapshots else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(ApiError::internal)?;
        let json = serde_json::to_vec(s).map_err(ApiError::internal)?;
        std::fs::write(dir.join(format!("{}.json", s.id)), json).map_err(ApiError::internal)
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

fn require_active(s: &Session) -> ApiResult<()> {
    match s.status {
        Status::Active => Ok(()),
        other => Err(ApiError::new(StatusCode::CONFLICT, format!("session {} is {:?}", s.id, other).to_lowercase())),
    }
}

async fn create(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let spec: WorldSpec = parse_body(&body)?;
    let state = reset(&spec).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let id = app.inner.next_id.fetch_add(1, Ordering::Relaxed);
    let session = Session { id, spec, state, pairs: vec![], status: Status::Active };
    app.snapshot(&session)?;
    let view = SessionView::of(&session);
    app.inner.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn show(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    Ok(Json(SessionView::of(&s)))
}

/// Infeasible actions are reported and leave the session untouched; feasible ones go
/// through `worlds::step` and are recorded.
async fn act(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<ActionResponse>> {
    let s = app.session(&id)?;
    let mut s = s.lock().unwrap();
    require_active(&s)?;
    let action: ActionTuple = parse_body(&body)?;
    if s.state.is_done() {
        return Err(ApiError::new(StatusCode::CONFLICT, "episode is over; finish the session"));
    }
    let outcome = step(&s.state, &action);
    let (feasible, reason, reward) = match outcome.feasibility {
        Ok(()) => {
            let before = std::mem::replace(&mut s.state, outcome.state);
            s.pairs.push(Pair { scene: before, action });
            app.snapshot(&s)?;
            (true, None, outcome.reward)
        }
        Err(r) => (false, Some(r), 0.0),
    };
    let session = SessionView::of(&s);
    Ok(Json(ActionResponse { feasible, reason, reward, session }))
}

async fn finish(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FinishResponse>> {
    let s = app.session(&id)?;
    let mut s = s.lock().unwrap();
    require_active(&s)?;
    let traj = Trajectory { spec: s.spec.clone(), source: Source::Human, steps: s.pairs.clone(), terminal: s.state.clone() };
    let pairs = {
        let _guard = app.inner.demo_lock.lock().unwrap();
        demos::file::append(&app.inner.demo_file, &[traj]).map_err(ApiError::internal)?
    };
    s.status = Status::Finished;
    app.snapshot(&s)?;
    Ok(Json(FinishResponse { id: s.id, pairs, demo_file: app.inner.demo_file.display().to_string() }))
}

async fn abandon(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let s = app.session(&id)?;
    let mut s = s.lock().unwrap();
    require_active(&s)?;
    s.status = Status::Abandoned;
    app.snapshot(&s)?;
    Ok(Json(SessionView::of(&s)))
}

#[derive(Debug, Deserialize)]
struct ExplainQuery {
    weights: Option<String>,
}

async fn explain(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExplainQuery>,
) -> ApiResult<Json<ExplanationRecord>> {
    let weights = q.weights.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing weights query parameter"))?;
    let path = resolve(std::path::Path::new(&weights));
    if !path.is_file() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no weight file at {}", path.display())));
    }
    let (state, context) = {
        let s = app.session(&id)?;
        let s = s.lock().unwrap();
        (s.state.clone(), format!("session {} step {}", s.id, s.pairs.len()))
    };
    let record = tokio::task::spawn_blocking(move || {
        let params = load_weights(&path).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        explain_state(&params, &state, &ExplainConfig::default(), &context)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Json(record))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id", get(show).delete(abandon))
        .route("/sessions/:id/action", post(act))
        .route("/sessions/:id/finish", post(finish))
        .route("/sessions/:id/explain", get(explain))
        .with_state(state)
}
