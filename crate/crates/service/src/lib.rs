//! HTTP/JSON API over engine sessions.
//!
//! Every value on the wire is in display units; normalized coordinates only
//! appear in the session log. Mutations of one session are serialized through
//! a fair async mutex, and the optimizer work runs on the blocking pool.

mod config;
pub mod view;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coopt_core::advisor::{candidate_stats, ChatTransport, CandidateStats, Policy};
use coopt_core::domain::{DesignPoint, DisplayScale, Fidelity};
use coopt_core::session::{AdvisorPolicy, Mode, Session, SessionConfig};
use coopt_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{Profile, ServiceConfig, ENV_ADVISOR_BASE_URL, ENV_ADVISOR_KEY_VAR, ENV_ADVISOR_MODEL, ENV_HOST, ENV_PORT, ENV_PROFILE};
use view::ObservationView;

/// Error body: `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no such {what}"))
    }

    fn body(&self) -> serde_json::Value {
        json!({ "error": { "code": self.code, "message": self.message } })
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } | Error::Range { .. } | Error::Argument(_) | Error::Config(_) | Error::Data(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::InsufficientSeed { .. } | Error::ModeForbids { .. } | Error::Closed => StatusCode::CONFLICT,
            Error::AdvisorUnavailable { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum EvaluationState {
    Pending,
    Done { observation: ObservationView },
    Failed { error: serde_json::Value },
}

struct Slot {
    session: Arc<tokio::sync::Mutex<Session>>,
    evaluations: Mutex<Vec<EvaluationState>>,
}

struct Shared {
    config: ServiceConfig,
    transport: Option<Arc<dyn ChatTransport>>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Shared {
            config,
            transport: None,
            sessions: RwLock::default(),
        }))
    }

    /// Replaces the HTTP chat transport of every session created later.
    pub fn with_transport(config: ServiceConfig, transport: Arc<dyn ChatTransport>) -> Self {
        Self(Arc::new(Shared {
            config,
            transport: Some(transport),
            sessions: RwLock::default(),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.0
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session"))
    }

    fn insert(&self, session: Session) -> String {
        let mut sessions = self.0.sessions.write().unwrap();
        let id = loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        sessions.insert(
            id.clone(),
            Arc::new(Slot {
                session: Arc::new(tokio::sync::Mutex::new(session)),
                evaluations: Mutex::default(),
            }),
        );
        id
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/propose", post(propose))
        .route("/sessions/{id}/evaluate", post(evaluate))
        .route("/sessions/{id}/evaluations/{k}", get(get_evaluation))
        .route("/sessions/{id}/sliders", post(set_sliders))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/log", get(get_log))
        .with_state(state)
}

/// Serves on an already bound listener until the process stops.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, profile = %config.profile, "listening");
    axum::serve(listener, router(AppState::new(config))).await
}

/// Runs `f` on the blocking pool while holding the session lock.
async fn locked<T, F>(slot: &Slot, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> ApiResult<T> + Send + 'static,
{
    let mut guard = slot.session.clone().lock_owned().await;
    tokio::task::spawn_blocking(move || f(&mut guard))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

fn parse_required<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let mut config: SessionConfig = parse_body(&body)?;
    if state.config().profile == Profile::Test {
        config.simulator.formal_delay_ms = 0;
        config.simulator.informal_delay_ms = 0;
    }
    if config.advisor.policy == AdvisorPolicy::Llm && config.advisor.endpoint.is_none() {
        config.advisor.endpoint = state.config().advisor.clone();
    }
    let transport = state.0.transport.clone();
    let session = tokio::task::spawn_blocking(move || {
        let s = Session::create(config)?;
        Ok::<_, Error>(match transport {
            Some(t) => s.with_transport(t),
            None => s,
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let snapshot = view::snapshot("", &session)?;
    let id = state.insert(session);
    let snapshot = view::SessionView { id: id.clone(), ..snapshot };
    Ok((
        StatusCode::CREATED,
        [(header::LOCATION, format!("/sessions/{id}"))],
        Json(json!({ "id": id, "session": snapshot })),
    ))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<view::SessionView>> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(view::snapshot(&id, &s)?))
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProposeBody {
    request: String,
}

#[derive(Serialize)]
struct ProposeResponse {
    candidate: CandidateStats,
    reason: String,
    policy: Policy,
    fallback: bool,
    retries: u32,
    sliders: Vec<f64>,
}

async fn propose(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<ProposeResponse>> {
    let slot = state.slot(&id)?;
    let ProposeBody { request } = parse_body(&body)?;
    let response = locked(&slot, move |s| {
        let (candidate, decision) = s.propose(&request)?;
        let app = s.app();
        Ok(ProposeResponse {
            candidate: candidate_stats(app, decision.index, &candidate)?,
            reason: decision.reason,
            policy: decision.policy,
            fallback: decision.fallback,
            retries: decision.retries,
            sliders: app.parameter_space.to_display(s.current_sliders().coords())?,
        })
    })
    .await?;
    Ok(Json(response))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateBody {
    parameters: Vec<f64>,
    fidelity: Fidelity,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SlidersBody {
    parameters: Vec<f64>,
}

/// Converts display values to a design point. A point that matches the
/// session's expected point up to display round-off is snapped onto it, so
/// clients can echo back what they were shown.
fn to_point(s: &Session, display: &[f64]) -> ApiResult<DesignPoint> {
    let x = DesignPoint::new(s.app().parameter_space.from_display(display)?)?;
    if let Some(expected) = s.expected_point() {
        let close = expected.dim() == x.dim() && expected.coords().iter().zip(x.coords()).all(|(a, b)| (a - b).abs() <= 1e-9);
        if close {
            return Ok(expected.clone());
        }
    }
    Ok(x)
}

fn submit(s: &mut Session, x: DesignPoint, fidelity: Fidelity) -> ApiResult<ObservationView> {
    let obs = s.submit_evaluation(x, fidelity)?;
    let flags = view::pareto_flags(s.history());
    Ok(view::observation(s.app(), &obs, flags[obs.iteration])?)
}

fn record(slot: &Slot, k: usize, outcome: &ApiResult<ObservationView>) {
    let state = match outcome {
        Ok(o) => EvaluationState::Done { observation: o.clone() },
        Err(e) => EvaluationState::Failed { error: e.body()["error"].clone() },
    };
    slot.evaluations.lock().unwrap()[k] = state;
}

async fn evaluate(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let EvaluateBody { parameters, fidelity } = parse_required(&body)?;
    let (x, delay) = locked(&slot, move |s| {
        let x = to_point(s, &parameters)?;
        s.check_evaluation(&x)?;
        Ok((x, s.config().simulator.delay(fidelity)))
    })
    .await?;

    let k = {
        let mut evals = slot.evaluations.lock().unwrap();
        evals.push(EvaluationState::Pending);
        evals.len() - 1
    };

    if delay.is_zero() {
        let outcome = locked(&slot, move |s| submit(s, x, fidelity)).await;
        record(&slot, k, &outcome);
        let observation = outcome?;
        return Ok(Json(json!({ "evaluation": k, "status": "done", "observation": observation })).into_response());
    }

    let task_slot = slot.clone();
    tokio::spawn(async move {
        tokio::time::sleep(delay).await;
        let outcome = locked(&task_slot, move |s| submit(s, x, fidelity)).await;
        record(&task_slot, k, &outcome);
    });
    let poll = format!("/sessions/{id}/evaluations/{k}");
    Ok((
        StatusCode::ACCEPTED,
        [(header::LOCATION, poll.clone())],
        Json(json!({ "evaluation": k, "status": "pending", "poll": poll, "delay_ms": delay.as_millis() as u64 })),
    )
        .into_response())
}

async fn get_evaluation(State(state): State<AppState>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let evals = slot.evaluations.lock().unwrap();
    let e = evals.get(k).ok_or_else(|| ApiError::not_found("evaluation"))?;
    let mut body = serde_json::to_value(e).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    body["evaluation"] = k.into();
    Ok(Json(body).into_response())
}

async fn set_sliders(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    let slot = state.slot(&id)?;
    let SlidersBody { parameters } = parse_required(&body)?;
    locked(&slot, move |s| {
        // Report the mode before any complaint about the values.
        if s.config().mode == Mode::BoLed {
            return Err(Error::ModeForbids {
                mode: Mode::BoLed.to_string(),
                detail: "sliders are disabled".into(),
            }
            .into());
        }
        let x = DesignPoint::new(s.app().parameter_space.from_display(&parameters)?)?;
        Ok(s.set_sliders(x)?)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn close(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let slot = state.slot(&id)?;
    locked(&slot, |s| Ok(s.close()?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_log(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let text = slot.session.lock().await.to_log_string();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}
