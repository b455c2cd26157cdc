//! Blocking HTTP client for the three services.

use std::sync::Arc;
use std::time::Duration;

use elpasso_core::groups::{GroupElement, G1};
use elpasso_core::protocol::enroll::{EnrollApprove, EnrollComplete, EnrollInit};
use elpasso_core::protocol::{
    BlindedCredentialMsg, RequestIdMsg, RetrievalReport, RotationRequest, SignOnRequest,
    SignOnResult,
};
use elpasso_core::wire::Envelope;
use elpasso_core::{IdpPublicKey, PartialDecryption};
use parking_lot::Mutex;
use reqwest::blocking::{RequestBuilder, Response};
use reqwest::header;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::{
    CaseRecord, DeviceRequest, IdpMeta, LookupResponse, ReportOutcome, ReportRequest,
    SessionRequest, SessionResponse, SignOnMeta,
};
use crate::http::{Format, BINARY, JSON};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("network error: {0}")]
    Network(String),
    #[error("server returned {status} {code}: {message}")]
    Status {
        status: u16,
        code: String,
        message: String,
    },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            Self::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Status { code, .. } => Some(code),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        Self::Network(e.to_string())
    }
}

/// One recorded response, for tests that inspect everything a server sent.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub url: String,
    pub status: u16,
    pub body: Vec<u8>,
}

pub type ExchangeLog = Arc<Mutex<Vec<Exchange>>>;

#[derive(Clone)]
pub struct Client {
    http: reqwest::blocking::Client,
    base: String,
    token: Option<String>,
    format: Format,
    log: Option<ExchangeLog>,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Self {
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("HTTP client builds"),
            base: base.trim_end_matches('/').to_string(),
            token: None,
            format: Format::Binary,
            log: None,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    /// Sends protocol messages as hex-in-JSON instead of the binary envelope.
    pub fn with_format(mut self, format: Format) -> Self {
        self.format = format;
        self
    }

    pub fn with_log(mut self, log: ExchangeLog) -> Self {
        self.log = Some(log);
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn auth(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn send(&self, rb: RequestBuilder) -> Result<(u16, Vec<u8>), ClientError> {
        let resp: Response = self.auth(rb).send()?;
        let url = resp.url().to_string();
        let status = resp.status().as_u16();
        let body = resp.bytes()?.to_vec();
        if let Some(log) = &self.log {
            log.lock().push(Exchange {
                url,
                status,
                body: body.clone(),
            });
        }
        Ok((status, body))
    }

    fn error(status: u16, body: &[u8]) -> ClientError {
        #[derive(serde::Deserialize)]
        struct Body {
            error: String,
            #[serde(default)]
            message: String,
        }
        match serde_json::from_slice::<Body>(body) {
            Ok(b) => ClientError::Status {
                status,
                code: b.error,
                message: b.message,
            },
            Err(_) => ClientError::Status {
                status,
                code: "http".into(),
                message: String::from_utf8_lossy(body).into_owned(),
            },
        }
    }

    fn json<R: DeserializeOwned>(status: u16, body: &[u8]) -> Result<R, ClientError> {
        if !(200..300).contains(&status) {
            return Err(Self::error(status, body));
        }
        serde_json::from_slice(body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get_json<R: DeserializeOwned>(&self, path: &str) -> Result<R, ClientError> {
        let (status, body) = self.send(self.http.get(self.url(path)))?;
        Self::json(status, &body)
    }

    fn post_json<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, ClientError> {
        let (status, body) = self.send(self.http.post(self.url(path)).json(body))?;
        Self::json(status, &body)
    }

    fn decode_envelope<R: Envelope + DeserializeOwned>(
        &self,
        body: &[u8],
    ) -> Result<R, ClientError> {
        match self.format {
            Format::Binary => R::decode(body).map_err(ClientError::Decode),
            Format::Json => {
                serde_json::from_slice(body).map_err(|e| ClientError::Decode(e.to_string()))
            }
        }
    }

    /// Posts a protocol message; statuses in `ok` carry a protocol reply.
    fn post_envelope<M: Envelope + Serialize, R: Envelope + DeserializeOwned>(
        &self,
        path: &str,
        msg: &M,
        ok: &[u16],
    ) -> Result<R, ClientError> {
        let (ct, body) = match self.format {
            Format::Binary => (BINARY, msg.encode()),
            Format::Json => (JSON, serde_json::to_vec(msg).expect("message serializes")),
        };
        let rb = self
            .http
            .post(self.url(path))
            .header(header::CONTENT_TYPE, ct)
            .header(header::ACCEPT, ct)
            .body(body);
        let (status, body) = self.send(rb)?;
        if !ok.contains(&status) {
            return Err(Self::error(status, &body));
        }
        self.decode_envelope(&body)
    }

    // Identity provider.

    /// Raw `/pk` bytes and the decoded key. Callers decide whether to trust it.
    pub fn fetch_pk(&self) -> Result<(Vec<u8>, IdpPublicKey), ClientError> {
        let (status, body) = self.send(
            self.http
                .get(self.url("/pk"))
                .header(header::ACCEPT, BINARY),
        )?;
        if status != 200 {
            return Err(Self::error(status, &body));
        }
        let pk = IdpPublicKey::from_bytes(&body).map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok((body, pk))
    }

    pub fn idp_meta(&self) -> Result<IdpMeta, ClientError> {
        self.get_json("/meta")
    }

    pub fn login(
        &self,
        login: &str,
        password: &str,
        device_id: &str,
    ) -> Result<SessionResponse, ClientError> {
        self.post_json(
            "/session",
            &SessionRequest {
                login: login.into(),
                password: password.into(),
                device_id: device_id.into(),
            },
        )
    }

    pub fn request_id(&self, msg: &RequestIdMsg) -> Result<BlindedCredentialMsg, ClientError> {
        self.post_envelope("/request-id", msg, &[200])
    }

    pub fn lookup(&self, h_gamma: &G1) -> Result<Option<String>, ClientError> {
        let rb = self
            .http
            .post(self.url("/lookup"))
            .header(header::CONTENT_TYPE, BINARY)
            .body(h_gamma.to_bytes());
        let (status, body) = self.send(rb)?;
        if status == 404 {
            return Ok(None);
        }
        Self::json::<LookupResponse>(status, &body).map(|r| Some(r.login))
    }

    pub fn enroll_init(&self, init: &EnrollInit) -> Result<(), ClientError> {
        let (status, body) = self.send(
            self.http
                .post(self.url("/devices/enroll-init"))
                .header(header::CONTENT_TYPE, BINARY)
                .body(init.encode()),
        )?;
        if status != 202 {
            return Err(Self::error(status, &body));
        }
        Ok(())
    }

    pub fn enroll_pending(&self) -> Result<Vec<EnrollInit>, ClientError> {
        self.get_json("/devices/enroll-pending")
    }

    pub fn enroll_approve(&self, approve: &EnrollApprove) -> Result<(), ClientError> {
        let (status, body) = self.send(
            self.http
                .post(self.url("/devices/enroll-approve"))
                .header(header::CONTENT_TYPE, BINARY)
                .body(approve.encode()),
        )?;
        Self::json::<serde_json::Value>(status, &body).map(|_| ())
    }

    /// `None` while the approval has not arrived.
    pub fn enroll_complete(&self, device_id: &str) -> Result<Option<EnrollComplete>, ClientError> {
        let (status, body) = self.send(
            self.http
                .get(self.url(&format!("/devices/enroll-complete/{device_id}")))
                .header(header::ACCEPT, BINARY),
        )?;
        match status {
            200 => EnrollComplete::decode(&body)
                .map(Some)
                .map_err(ClientError::Decode),
            404 => Ok(None),
            s => Err(Self::error(s, &body)),
        }
    }

    pub fn revoke(&self, device_id: &str) -> Result<(), ClientError> {
        self.post_json::<_, serde_json::Value>(
            "/devices/revoke",
            &DeviceRequest {
                device_id: device_id.into(),
            },
        )
        .map(|_| ())
    }

    // Relying party.

    pub fn signon_meta(&self) -> Result<SignOnMeta, ClientError> {
        self.get_json("/signon-meta")
    }

    /// Accepted and rejected sign-ons both return a [`SignOnResult`].
    pub fn signon(&self, req: &SignOnRequest) -> Result<SignOnResult, ClientError> {
        self.post_envelope("/signon", req, &[200, 403])
    }

    pub fn rotate(&self, req: &RotationRequest) -> Result<SignOnResult, ClientError> {
        self.post_envelope("/rotate", req, &[200, 403])
    }

    pub fn report(&self, account_id: &str) -> Result<ReportOutcome, ClientError> {
        self.post_json(
            "/report",
            &ReportRequest {
                account_id: account_id.into(),
            },
        )
    }

    // Authority.

    /// One authority's decryption share for a reported token.
    pub fn partial(&self, report: &RetrievalReport) -> Result<PartialDecryption, ClientError> {
        self.post_envelope("/partial", report, &[200])
    }

    pub fn case(&self, case_id: &str) -> Result<CaseRecord, ClientError> {
        self.get_json(&format!("/cases/{case_id}"))
    }

    /// Posts raw bytes and returns status and body, for fault-injection tests.
    pub fn post_raw(
        &self,
        path: &str,
        content_type: &str,
        body: Vec<u8>,
    ) -> Result<(u16, Vec<u8>), ClientError> {
        self.send(
            self.http
                .post(self.url(path))
                .header(header::CONTENT_TYPE, content_type)
                .body(body),
        )
    }

    pub fn get_raw(&self, path: &str) -> Result<(u16, Vec<u8>), ClientError> {
        self.send(self.http.get(self.url(path)))
    }
}
