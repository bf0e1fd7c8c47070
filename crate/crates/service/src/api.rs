//! HTTP+JSON API. The route table lives in docs/api.md.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hmit_core::agents::PipelineConfig;
use hmit_core::codes::{registry, ErrorCategory};
use serde::{Deserialize, Serialize};

use crate::workspace::{PostEditSubmission, Workspace, WorkspaceError};

pub type Shared = Arc<Workspace>;

pub struct ApiError(WorkspaceError);

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        ApiError(e)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use WorkspaceError as E;
        let status = match &self.0 {
            E::UnknownDocument(_) | E::UnknownSegment(_) | E::UnknownJob(_) | E::NotFound(_) => StatusCode::NOT_FOUND,
            E::StaleVersion { .. } | E::DocumentBusy(_) => StatusCode::CONFLICT,
            E::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(ws: Shared) -> Router {
    Router::new()
        .route("/api/registry", get(codes))
        .route("/api/documents", get(documents))
        .route("/api/documents/{doc_id}/segments", get(segments))
        .route("/api/documents/{doc_id}/segments/{seg_id}", get(segment))
        .route("/api/documents/{doc_id}/vetting", get(vetting))
        .route("/api/post-edits", post(post_edit))
        .route("/api/jobs", get(jobs).post(start_job))
        .route("/api/jobs/{job_id}", get(job))
        .route("/api/runs/{run_id}/log", get(run_log))
        .route("/api/cost", get(cost))
        .route("/api/eval/sheet", get(eval_sheet))
        .with_state(ws)
}

#[derive(Serialize)]
struct CodeView {
    code: &'static str,
    category: ErrorCategory,
    category_label: String,
    description: &'static str,
}

async fn codes() -> Json<Vec<CodeView>> {
    Json(
        registry()
            .iter()
            .map(|c| CodeView {
                code: c.code,
                category: c.category,
                category_label: c.category.to_string(),
                description: c.description,
            })
            .collect(),
    )
}

async fn documents(State(ws): State<Shared>) -> impl IntoResponse {
    Json(ws.documents())
}

async fn segments(State(ws): State<Shared>, Path(doc_id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(ws.segments(&doc_id)?))
}

async fn segment(State(ws): State<Shared>, Path((doc_id, seg_id)): Path<(String, u32)>) -> ApiResult<impl IntoResponse> {
    Ok(Json(ws.segment(&doc_id, seg_id)?))
}

async fn vetting(State(ws): State<Shared>, Path(doc_id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(ws.vetting_bundle(&doc_id)?))
}

/// Body parse failures are reported as 422 with the serde message.
async fn post_edit(State(ws): State<Shared>, body: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let sub: PostEditSubmission =
        serde_json::from_slice(&body).map_err(|e| WorkspaceError::Invalid(e.to_string()))?;
    // File writes fsync; keep them off the async workers.
    let res = tokio::task::spawn_blocking(move || ws.post_edit(&sub))
        .await
        .map_err(|e| WorkspaceError::Invalid(format!("edit task failed: {e}")))??;
    Ok(Json(res))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartJob {
    doc_id: String,
    config: PipelineConfig,
    #[serde(default)]
    run_id: Option<String>,
    #[serde(default)]
    from_seg: Option<u32>,
}

async fn start_job(State(ws): State<Shared>, body: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let req: StartJob = serde_json::from_slice(&body).map_err(|e| WorkspaceError::Invalid(e.to_string()))?;
    let job = ws.submit_job(&req.doc_id, req.config, req.run_id, req.from_seg)?;
    let id = job.job_id.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = ws.execute_job(&id, &mut |_| {}) {
            eprintln!("job {id} failed: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn jobs(State(ws): State<Shared>) -> impl IntoResponse {
    Json(ws.jobs())
}

async fn job(State(ws): State<Shared>, Path(job_id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(ws.job(&job_id)?))
}

async fn run_log(State(ws): State<Shared>, Path(run_id): Path<String>) -> ApiResult<impl IntoResponse> {
    let body = ws.run_log(&run_id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

#[derive(Deserialize)]
struct CostQuery {
    run_id: Option<String>,
}

async fn cost(State(ws): State<Shared>, Query(q): Query<CostQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(ws.cost_summary(q.run_id.as_deref())?))
}

async fn eval_sheet(State(ws): State<Shared>) -> ApiResult<impl IntoResponse> {
    let body = ws.eval_sheet_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body))
}
