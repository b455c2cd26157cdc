//! Body negotiation and error replies shared by the three services.
//!
//! Protocol messages travel as the binary envelope (`application/octet-stream`)
//! or as hex-in-JSON (`application/json`). Requests are decoded by their
//! `Content-Type`; replies follow `Accept`, falling back to the request's format.

use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use elpasso_core::wire::Envelope;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const BINARY: &str = "application/octet-stream";
pub const JSON: &str = "application/json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Json,
}

impl Format {
    pub fn of_request(headers: &HeaderMap) -> Self {
        match headers
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
        {
            Some(ct) if ct.starts_with(JSON) => Self::Json,
            _ => Self::Binary,
        }
    }

    pub fn for_reply(headers: &HeaderMap) -> Self {
        match headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()) {
            Some(a) if a.contains(JSON) => Self::Json,
            Some(a) if a.contains(BINARY) => Self::Binary,
            _ => Self::of_request(headers),
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Self::Binary => BINARY,
            Self::Json => JSON,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or invalid credentials",
        )
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        tracing::error!(error = %e, "internal error");
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            "internal error",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, axum::Json(body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

pub fn decode<T: Envelope + DeserializeOwned>(headers: &HeaderMap, body: &[u8]) -> ApiResult<T> {
    match Format::of_request(headers) {
        Format::Binary => T::decode(body).map_err(ApiError::bad_request),
        Format::Json => {
            serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
        }
    }
}

pub fn encode<T: Envelope + Serialize>(status: StatusCode, format: Format, msg: &T) -> Response {
    let body = match format {
        Format::Binary => msg.encode(),
        Format::Json => serde_json::to_vec(msg).expect("message serializes"),
    };
    (
        status,
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static(format.content_type()),
        )],
        body,
    )
        .into_response()
}

pub fn json_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

pub fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// Runs CPU-bound protocol work off the async workers.
pub async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)
}

pub fn random_token() -> String {
    use rand::RngCore;
    let mut b = [0u8; 24];
    rand::rngs::OsRng.fill_bytes(&mut b);
    hex::encode(b)
}
