//! The `/v1` JSON endpoints.

use std::path::Path;
use std::sync::Arc;

use aact_core::workflow::{Answer, DialogueMessage, HumanState, Transcript, UpdateRequest};
use axum::body::Bytes;
use axum::extract::{FromRequest, Path as UrlPath, Request, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::ServiceError;
use crate::store::{CreateSession, Created, SessionStore, StepState, TaskView};

type Shared = State<Arc<SessionStore>>;

/// JSON body whose decoding errors carry the offending field path.
pub struct JsonBody<T>(pub T);

impl<S, T> FromRequest<S> for JsonBody<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ServiceError::MalformedBody(e.body_text()))?;
        let mut de = serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(&mut de)
            .map(JsonBody)
            .map_err(|e| ServiceError::MalformedBody(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionBody {
    pub reported_confidence: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
    pub tasks: usize,
    pub classes: Vec<String>,
    pub features: Vec<String>,
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}/task", get(task))
        .route("/v1/sessions/{id}/initial", post(initial))
        .route("/v1/sessions/{id}/prompt", get(prompt))
        .route("/v1/sessions/{id}/reflection", post(reflection))
        .route("/v1/sessions/{id}/update", post(update))
        .route("/v1/sessions/{id}/skip", post(skip))
        .route("/v1/sessions/{id}/transcript", get(transcript))
        .with_state(store)
}

/// [`router`] plus static UI assets for every other path.
pub fn router_with_static(store: Arc<SessionStore>, dir: impl AsRef<Path>) -> Router {
    router(store).fallback_service(ServeDir::new(dir.as_ref()))
}

/// Runs session work off the async executor; critiques can take a while.
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn health(State(store): Shared) -> Json<Health> {
    let schema = store.engine().schema();
    Json(Health {
        status: "ok".into(),
        sessions: store.len(),
        tasks: store.tasks().len(),
        classes: schema.classes.clone(),
        features: schema.feature_names(),
    })
}

async fn create(
    State(store): Shared,
    JsonBody(request): JsonBody<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ServiceError> {
    let created = blocking(move || store.create(&request)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn task(State(store): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<TaskView>, ServiceError> {
    store.task(&id).map(Json)
}

async fn act(store: Arc<SessionStore>, id: String, answer: Answer) -> Result<Json<StepState>, ServiceError> {
    blocking(move || store.apply(&id, &answer)).await.map(Json)
}

async fn initial(
    State(store): Shared,
    UrlPath(id): UrlPath<String>,
    JsonBody(state): JsonBody<HumanState>,
) -> Result<Json<StepState>, ServiceError> {
    act(store, id, Answer::Initial(state)).await
}

async fn prompt(State(store): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<DialogueMessage>, ServiceError> {
    store.prompt(&id).map(Json)
}

async fn reflection(
    State(store): Shared,
    UrlPath(id): UrlPath<String>,
    JsonBody(body): JsonBody<ReflectionBody>,
) -> Result<Json<StepState>, ServiceError> {
    act(
        store,
        id,
        Answer::Reflection {
            reported_confidence: body.reported_confidence,
        },
    )
    .await
}

async fn update(
    State(store): Shared,
    UrlPath(id): UrlPath<String>,
    JsonBody(request): JsonBody<UpdateRequest>,
) -> Result<Json<StepState>, ServiceError> {
    act(store, id, Answer::Update(request)).await
}

async fn skip(State(store): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<StepState>, ServiceError> {
    act(store, id, Answer::Skip).await
}

async fn transcript(State(store): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Transcript>, ServiceError> {
    store.transcript(&id).map(Json)
}
