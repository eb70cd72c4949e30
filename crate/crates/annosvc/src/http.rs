use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::aggregate;
use crate::error::AnnoError;
use crate::model::TaskKind;
use crate::store::{parse_submit_body, AnnoService};

impl AnnoError {
    pub fn status(&self) -> StatusCode {
        match self {
            AnnoError::UnknownSession(_) | AnnoError::UnknownTask(_) => StatusCode::NOT_FOUND,
            AnnoError::IllegalJudgment { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            AnnoError::Duplicate { .. } | AnnoError::QuotaReached(_) => StatusCode::CONFLICT,
            AnnoError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for AnnoError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

type Svc = Arc<AnnoService>;
type HttpResult = std::result::Result<Response, AnnoError>;

async fn blocking<T, F>(svc: Svc, f: F) -> std::result::Result<T, AnnoError>
where
    T: Send + 'static,
    F: FnOnce(&AnnoService) -> crate::error::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| AnnoError::Contract(format!("worker failed: {e}")))?
}

async fn new_session(State(svc): State<Svc>) -> HttpResult {
    let id = blocking(svc, |s| s.new_session()).await?;
    Ok(Json(json!({"session_id": id})).into_response())
}

async fn next_task(State(svc): State<Svc>, Query(q): Query<HashMap<String, String>>) -> HttpResult {
    let session = q
        .get("session")
        .cloned()
        .ok_or_else(|| AnnoError::BadRequest("missing session parameter".into()))?;
    let kind = match q.get("kind") {
        None => None,
        Some(k) => Some(TaskKind::parse(k).ok_or_else(|| AnnoError::BadRequest(format!("unknown task kind {k:?}")))?),
    };
    let catalog = svc.catalog().clone();
    match blocking(svc, move |s| s.next_task(&session, kind)).await? {
        Some((task, expires)) => Ok(Json(catalog.task_view(&task, expires)).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn submit(State(svc): State<Svc>, body: Bytes) -> HttpResult {
    let body = parse_submit_body(&body)?;
    blocking(svc, move |s| s.submit(&body)).await?;
    Ok(Json(json!({"ok": true})).into_response())
}

async fn aggregate_view(State(svc): State<Svc>, Path(which): Path<String>) -> HttpResult {
    let snap = svc.snapshot();
    let c = svc.catalog();
    let value = match which.as_str() {
        "reading" => serde_json::to_value(aggregate::aggregate_reading_accuracy(&c.pairs, &c.tasks, &snap.records)?),
        "cmos" => serde_json::to_value(aggregate::aggregate_cmos(&c.pairs, &c.tasks, &snap.records, c.gap_threshold)?),
        "similarity" => serde_json::to_value(aggregate::aggregate_similarity(&c.pairs, &c.tasks, &snap.records)?),
        other => {
            return Ok((StatusCode::NOT_FOUND, Json(json!({"error": format!("no aggregate {other:?}")}))).into_response())
        }
    }
    .map_err(|e| AnnoError::Contract(e.to_string()))?;
    Ok(Json(value).into_response())
}

async fn export(State(svc): State<Svc>) -> HttpResult {
    let text = blocking(svc, |s| s.export()).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn status(State(svc): State<Svc>) -> HttpResult {
    let report = blocking(svc, |s| Ok(s.replication_status())).await?;
    Ok(Json(report).into_response())
}

pub fn router(svc: Arc<AnnoService>) -> Router {
    Router::new()
        .route("/api/v1/session/new", get(new_session))
        .route("/api/v1/task", get(next_task))
        .route("/api/v1/submit", post(submit))
        .route("/api/v1/aggregate/{which}", get(aggregate_view))
        .route("/api/v1/export", get(export))
        .route("/api/v1/status", get(status))
        .with_state(svc)
}

/// Serves on `addr` until the listener fails. `on_bound` receives the
/// actual address, which matters when binding port 0.
pub async fn serve(
    svc: Arc<AnnoService>,
    addr: SocketAddr,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(svc)).await
}
