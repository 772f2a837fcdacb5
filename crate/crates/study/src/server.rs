//! HTTP routes.
//!
//! | method | path                                   | body / result              |
//! |--------|----------------------------------------|----------------------------|
//! | POST   | `/sessions`                            | `CreateSession` → `SessionInfo` |
//! | GET    | `/sessions/{id}/trials/{t}/steps/{k}`  | `StepPayload`              |
//! | POST   | `/sessions/{id}/responses`             | `SubmitResponse` → `Ack`   |
//! | GET    | `/sessions/{id}/export`                | `Export`                   |

use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::session::{
    trial_order, Ack, Event, Export, Response, Session, StepPayload, Store, HABITUATION_TRIALS, PAYLOAD_SCHEMA_VERSION,
};
use crate::suite::{Suite, CHECKPOINTS};
use crate::StudyError;

pub struct AppState {
    pub suite: Arc<Suite>,
    pub store: Mutex<Store>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(suite: Suite, store: Store) -> Shared {
        Arc::new(AppState {
            suite: Arc::new(suite),
            store: Mutex::new(store),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub schema_version: u32,
    pub id: String,
    pub participant: String,
    pub trials: usize,
    pub habituation: usize,
    pub checkpoints: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub trial: usize,
    pub checkpoint: usize,
    pub slider: i64,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for StudyError {
    fn into_response(self) -> HttpResponse {
        let status = match &self {
            StudyError::NotFound(_) => StatusCode::NOT_FOUND,
            StudyError::Forbidden(_) => StatusCode::FORBIDDEN,
            StudyError::Conflict(_) => StatusCode::CONFLICT,
            StudyError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::Suite(_) | StudyError::Store(_) | StudyError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/trials/{trial}/steps/{step}", get(get_step))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn session<'a>(store: &'a Store, id: &str) -> Result<&'a Session, StudyError> {
    store
        .sessions
        .get(id)
        .ok_or_else(|| StudyError::NotFound(format!("session {id}")))
}

async fn create_session(State(st): State<Shared>, Json(req): Json<CreateSession>) -> Result<Json<SessionInfo>, StudyError> {
    if st.suite.trials.is_empty() {
        return Err(StudyError::Suite("suite has no trials".into()));
    }
    let order = trial_order(st.suite.trials.len(), req.seed);
    let habituation = HABITUATION_TRIALS.min(order.len().saturating_sub(1));
    let mut store = st.store.lock().expect("store lock");
    let id = store.next_id();
    let trials = order.len();
    store.record(Event::Created {
        id: id.clone(),
        participant: req.participant.clone(),
        seed: req.seed,
        order,
        habituation,
    })?;
    Ok(Json(SessionInfo {
        schema_version: PAYLOAD_SCHEMA_VERSION,
        id,
        participant: req.participant,
        trials,
        habituation,
        checkpoints: CHECKPOINTS,
    }))
}

async fn get_step(
    State(st): State<Shared>,
    Path((id, trial, step)): Path<(String, usize, usize)>,
) -> Result<Json<StepPayload>, StudyError> {
    let mut store = st.store.lock().expect("store lock");
    let s = session(&store, &id)?;
    let advances = s.check_view(&st.suite, trial, step)?;
    let payload = s.payload(&st.suite, trial, step);
    if advances {
        store.record(Event::Viewed { id, trial, step })?;
    }
    Ok(Json(payload))
}

async fn submit_response(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SubmitResponse>,
) -> Result<Json<Ack>, StudyError> {
    let mut store = st.store.lock().expect("store lock");
    let s = session(&store, &id)?;
    let checked = s.check_response(&st.suite, req.trial, req.checkpoint, req.slider)?;
    let stored = match checked {
        None => false,
        Some(slider) => {
            store.record(Event::Responded {
                id: id.clone(),
                response: Response {
                    trial: req.trial,
                    checkpoint: req.checkpoint,
                    slider,
                    timestamp_ms: now_ms(),
                },
            })?;
            true
        }
    };
    let s = session(&store, &id)?;
    Ok(Json(Ack {
        trial: req.trial,
        checkpoint: req.checkpoint,
        slider: req.slider as u8,
        stored,
        trial_complete: s.responses.iter().filter(|r| r.trial == req.trial).count() == CHECKPOINTS,
        session_complete: s.trial >= s.order.len(),
    }))
}

async fn export(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<Export>, StudyError> {
    let store = st.store.lock().expect("store lock");
    Ok(Json(session(&store, &id)?.export(&st.suite)))
}
