use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::record::{LabelSubmission, Round};
use crate::store::AnnotationStore;
use crate::AnnotateError;

pub struct AppState {
    pub store: Mutex<AnnotationStore>,
    /// Root that manifest media paths are relative to.
    pub data_root: PathBuf,
    /// Where finalization writes the labeled manifest.
    pub manifest_out: PathBuf,
}

pub type SharedState = Arc<AppState>;

impl AnnotateError {
    fn status(&self) -> StatusCode {
        match self {
            AnnotateError::UnknownAnnotator(_) | AnnotateError::UnknownGif(_) => StatusCode::NOT_FOUND,
            AnnotateError::CriteriaRequired | AnnotateError::CriteriaForbidden | AnnotateError::EmptyOverlap => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            AnnotateError::NotServed { .. } | AnnotateError::RoundInactive { .. } | AnnotateError::Unresolved(_) => {
                StatusCode::CONFLICT
            }
            AnnotateError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AnnotateError::Config(_) | AnnotateError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code(), "message": self.to_string()});
        if let AnnotateError::Unresolved(ids) = &self {
            body["ids"] = json!(ids);
        }
        (self.status(), Json(body)).into_response()
    }
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, AnnotationStore> {
    state.store.lock().unwrap_or_else(|p| p.into_inner())
}

fn parse_round(raw: Option<&str>) -> Result<Round, AnnotateError> {
    raw.ok_or_else(|| AnnotateError::BadRequest("missing round".into()))?.parse()
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
    round: Option<String>,
}

async fn next(State(state): State<SharedState>, Query(q): Query<NextQuery>) -> Result<Response, AnnotateError> {
    let round = parse_round(q.round.as_deref())?;
    match lock(&state).next_unlabeled(&q.annotator, round)? {
        Some(gif) => Ok(Json(gif).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

#[derive(Serialize)]
struct Progress {
    labeled: usize,
    served: usize,
}

async fn progress(State(state): State<SharedState>, Query(q): Query<NextQuery>) -> Result<Response, AnnotateError> {
    let round = parse_round(q.round.as_deref())?;
    let store = lock(&state);
    if !store.annotators().any(|a| a == q.annotator) {
        return Err(AnnotateError::UnknownAnnotator(q.annotator));
    }
    let labeled = store.records().iter().filter(|r| r.annotator_id == q.annotator && r.round == round).count();
    let served = store.served_count(&q.annotator, round);
    Ok(Json(Progress { labeled, served }).into_response())
}

async fn media(State(state): State<SharedState>, UrlPath(id): UrlPath<String>) -> Result<Response, AnnotateError> {
    let rel = {
        let store = lock(&state);
        let gif = store.gif(&id).ok_or_else(|| AnnotateError::UnknownGif(id.clone()))?;
        gif.media_path.clone().ok_or_else(|| AnnotateError::UnknownGif(id.clone()))?
    };
    let path = state.data_root.join(rel);
    let bytes = tokio::fs::read(&path).await.map_err(|e| AnnotateError::io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, "image/gif")], bytes).into_response())
}

async fn label(
    State(state): State<SharedState>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Result<Response, AnnotateError> {
    let Json(submission) = body.map_err(|e| AnnotateError::BadRequest(e.body_text()))?;
    let record = lock(&state).submit(submission, Utc::now())?;
    Ok(Json(record).into_response())
}

#[derive(Deserialize)]
struct AgreementQuery {
    round: Option<String>,
    a: String,
    b: String,
}

async fn agreement(State(state): State<SharedState>, Query(q): Query<AgreementQuery>) -> Result<Response, AnnotateError> {
    let round = parse_round(q.round.as_deref())?;
    Ok(Json(lock(&state).agreement_report(round, &q.a, &q.b)?).into_response())
}

#[derive(Deserialize)]
struct RoundQuery {
    round: Option<String>,
}

async fn disagreements(State(state): State<SharedState>, Query(q): Query<RoundQuery>) -> Result<Response, AnnotateError> {
    let round = q.round.as_deref().map_or(Ok(Round::Round1), str::parse)?;
    let store = lock(&state);
    let list = if round == Round::Round1 { store.open_disagreements() } else { store.disagreements(round) };
    Ok(Json(list).into_response())
}

async fn finalize(State(state): State<SharedState>) -> Result<Response, AnnotateError> {
    let mut store = lock(&state);
    let summary = store.finalize()?;
    store
        .manifest()
        .save(&state.manifest_out)
        .map_err(|e| AnnotateError::Io(format!("{}: {e}", state.manifest_out.display())))?;
    tracing::info!(?summary, path = %state.manifest_out.display(), "labels finalized");
    Ok(Json(summary).into_response())
}

/// The REST API, plus static files from `static_dir` for any other path.
pub fn router(state: SharedState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/next", get(next))
        .route("/api/progress", get(progress))
        .route("/api/gif/{id}/media", get(media))
        .route("/api/label", post(label))
        .route("/api/agreement", get(agreement))
        .route("/api/disagreements", get(disagreements))
        .route("/api/finalize", post(finalize))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until interrupted.
pub async fn serve(addr: SocketAddr, state: SharedState, static_dir: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
