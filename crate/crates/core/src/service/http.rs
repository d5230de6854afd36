//! JSON HTTP API over [`ChatService`].
//!
//! | method | path                  | body                                      | reply          |
//! |--------|-----------------------|-------------------------------------------|----------------|
//! | POST   | `/sessions`           | optional `SessionOverrides`               | 201 `Session`  |
//! | GET    | `/sessions/{id}`      |                                           | `Session`      |
//! | POST   | `/sessions/{id}/turns`| `{"message", "seed"?, "strategy"?}`       | `TurnResponse` |
//! | GET    | `/healthz`            |                                           | `{"status", "checkpoint"}` |
//!
//! Failures reply with `{"error": code, "detail": message}` where code is
//! one of `invalid_request`, `not_found`, `generation_failed`, `internal`.

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use std::net::SocketAddr;
use std::sync::Arc;

use super::{ChatService, SessionOverrides};
use crate::error::Error;
use crate::strategy::Strategy;

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: String,
}

impl ApiError {
    fn bad_request(detail: impl ToString) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            detail: detail.to_string(),
        }
    }

    fn internal(detail: impl ToString) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            detail: detail.to_string(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::SessionNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::InvalidArgument(_) | Error::UnknownStrategy(_) | Error::Parse { .. } => (StatusCode::BAD_REQUEST, "invalid_request"),
            Error::UndefinedRatio { .. } | Error::Shape(_) => (StatusCode::INTERNAL_SERVER_ERROR, "generation_failed"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            code,
            detail: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "detail": self.detail}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?.map_err(ApiError::from)
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(ApiError::bad_request)
}

async fn create_session(State(svc): State<Arc<ChatService>>, body: Bytes) -> ApiResult<Response> {
    let overrides: SessionOverrides = parse_body(&body)?;
    let session = blocking(move || svc.create_session(overrides)).await?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(svc): State<Arc<ChatService>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.get_session(&id)?).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRequest {
    message: String,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    strategy: Option<Strategy>,
}

async fn post_turn(State(svc): State<Arc<ChatService>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: TurnRequest = serde_json::from_slice(&body).map_err(ApiError::bad_request)?;
    let reply = blocking(move || svc.chat_turn(&id, &req.message, req.seed, req.strategy)).await?;
    Ok(Json(reply).into_response())
}

async fn healthz(State(svc): State<Arc<ChatService>>) -> Response {
    Json(json!({"status": "ok", "checkpoint": svc.checkpoint()})).into_response()
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        detail: "no such route".into(),
    }
}

/// Permissive CORS so a browser client served elsewhere can call the API.
async fn cors(req: Request, next: Next) -> Response {
    let mut resp = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    resp
}

pub fn router(service: Arc<ChatService>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .layer(middleware::from_fn(cors))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<ChatService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
