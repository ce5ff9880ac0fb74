//! HTTP routes. Every error body is `{code, message}`.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::session::{CreateReply, CreateRequest, FeedbackReply, FeedbackRequest, SessionError, SessionManager, SessionView};

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(pub SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            SessionError::UnknownTop(_) | SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::Capacity(_) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::InvalidScore(_) | SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::NoPending(_) => StatusCode::CONFLICT,
            SessionError::Internal(ref m) => {
                tracing::error!("internal error: {m}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let body = ErrorBody {
            code: self.0.code().to_owned(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn bad_body(e: impl std::fmt::Display) -> ApiError {
    ApiError(SessionError::BadRequest(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    pub swatch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopsPage {
    pub items: Vec<TopItem>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub active_sessions: usize,
    pub candidates: usize,
    pub proxy_mode: bool,
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/catalog/tops", get(tops))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/feedback", post(feedback))
        .with_state(manager)
}

async fn health(State(m): State<Arc<SessionManager>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        active_sessions: m.active(),
        candidates: m.engine().catalog.len(),
        proxy_mode: m.engine().scorer.is_some(),
    })
}

async fn tops(State(m): State<Arc<SessionManager>>, q: Result<Query<PageQuery>, QueryRejection>) -> ApiResult<TopsPage> {
    let Query(q) = q.map_err(bad_body)?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(bad_body(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let offset = q.offset.unwrap_or(0);
    let ds = &m.engine().dataset;
    let items = ds
        .tops
        .iter()
        .skip(offset)
        .take(limit)
        .map(|id| {
            let g = &ds.garments[id];
            TopItem {
                id: id.clone(),
                image_url: g.image_url.clone(),
                swatch: crate::session::swatch(&g.feature),
            }
        })
        .collect();
    Ok(Json(TopsPage {
        items,
        total: ds.tops.len(),
        offset,
        limit,
    }))
}

async fn create(
    State(m): State<Arc<SessionManager>>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateReply>), ApiError> {
    let Json(req) = body.map_err(bad_body)?;
    Ok((StatusCode::CREATED, Json(m.create(req)?)))
}

async fn show(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<SessionView> {
    Ok(Json(m.get(&id)?))
}

async fn feedback(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<FeedbackReply> {
    let Json(req) = body.map_err(bad_body)?;
    Ok(Json(m.feedback(&id, req)?))
}
