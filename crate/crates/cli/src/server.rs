//! JSON routes over a [`HumanRegistry`]. Each token walks its session in
//! order: consent, then alternate `next` and `responses` until complete.

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bayesbench::harness::{HumanError, HumanRegistry};
use bayesbench::stimulus::SessionKind;
use serde::Deserialize;
use serde_json::json;
use std::sync::Arc;

type Registry = Arc<HumanRegistry>;

pub struct ApiError(HumanError);

impl From<HumanError> for ApiError {
    fn from(e: HumanError) -> Self {
        ApiError(e)
    }
}

pub fn status_for(e: &HumanError) -> StatusCode {
    match e {
        HumanError::UnknownToken => StatusCode::UNAUTHORIZED,
        HumanError::ConsentRequired => StatusCode::FORBIDDEN,
        HumanError::OutOfOrder { .. } | HumanError::Complete => StatusCode::CONFLICT,
        HumanError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
        HumanError::UnknownExperiment(_) | HumanError::UnknownSession(_) | HumanError::NotFound => {
            StatusCode::NOT_FOUND
        }
        HumanError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_for(&self.0), Json(json!({"error": self.0.to_string()}))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct NewSession {
    pub experiment_id: String,
    #[serde(default)]
    pub session: Option<SessionKind>,
}

#[derive(Debug, Deserialize)]
pub struct Answer {
    pub trial_index: usize,
    pub response: String,
}

async fn experiments(State(reg): State<Registry>) -> impl IntoResponse {
    Json(json!({"experiments": reg.experiment_ids()}))
}

async fn create(State(reg): State<Registry>, Json(req): Json<NewSession>) -> Result<Response, ApiError> {
    let ticket = reg.create_session(&req.experiment_id, req.session)?;
    Ok((StatusCode::CREATED, Json(ticket)).into_response())
}

async fn consent(State(reg): State<Registry>, Path(token): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(reg.consent(&token)?).into_response())
}

async fn status(State(reg): State<Registry>, Path(token): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(reg.status(&token)?).into_response())
}

async fn next(State(reg): State<Registry>, Path(token): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(reg.next_trial(&token)?).into_response())
}

async fn respond(
    State(reg): State<Registry>,
    Path(token): Path<String>,
    Json(answer): Json<Answer>,
) -> Result<Response, ApiError> {
    // The append is a small synchronous write.
    let status = tokio::task::spawn_blocking(move || reg.submit(&token, answer.trial_index, &answer.response))
        .await
        .map_err(|e| ApiError(HumanError::Storage(e.to_string())))??;
    Ok(Json(status).into_response())
}

async fn stimulus(
    State(reg): State<Registry>,
    Path((experiment, session, file)): Path<(String, String, String)>,
) -> Result<Response, ApiError> {
    let id = file.strip_suffix(".png").ok_or(HumanError::NotFound)?;
    let png = reg.image(&experiment, &session, id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response())
}

pub fn router(registry: Registry) -> Router {
    Router::new()
        .route("/experiments", get(experiments))
        .route("/sessions", post(create))
        .route("/sessions/{token}", get(status))
        .route("/sessions/{token}/consent", post(consent))
        .route("/sessions/{token}/next", get(next))
        .route("/sessions/{token}/responses", post(respond))
        .route("/stimuli/{experiment}/{session}/{file}", get(stimulus))
        .with_state(registry)
}
