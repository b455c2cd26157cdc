//! Retrieval authority: answers partial-decryption requests with its share,
//! combines partials and resolves the recovered `h^γ` at the IdP.
//!
//! The recovered login stays with the authorities; the RP only learns
//! whether the case was resolved.

use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elpasso_core::groups::{GroupElement, PublicParams};
use elpasso_core::protocol::{Clock, RetrievalReport};
use elpasso_core::retrieval::{combine, partial_decrypt, AuthorityShare, RetrievalError};
use elpasso_core::{AuthorityPublic, G1};
use rand::rngs::OsRng;

use crate::api::{CaseRecord, LookupResponse, RecoverResponse};
use crate::config::AuthorityConfig;
use crate::http::{self, bearer, blocking, decode, encode, ApiError, ApiResult, Format};
use crate::store::KvStore;

#[derive(Debug, Clone)]
pub struct AuthorityOptions {
    pub idp_url: String,
    pub idp_token: String,
    pub rp_tokens: Vec<String>,
    pub admin_token: String,
}

pub struct AuthorityState {
    opts: AuthorityOptions,
    params: Arc<PublicParams>,
    public: AuthorityPublic,
    share: AuthorityShare,
    store: KvStore,
    clock: Arc<dyn Clock>,
    http: reqwest::Client,
}

impl AuthorityState {
    pub fn new(
        opts: AuthorityOptions,
        public: AuthorityPublic,
        share: AuthorityShare,
        store: KvStore,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Arc<Self>> {
        anyhow::ensure!(
            public.commitment(share.index).is_some(),
            "share {} is not part of the authority set",
            share.index
        );
        Ok(Arc::new(Self {
            opts,
            params: Arc::new(PublicParams::setup(128)?),
            public,
            share,
            store,
            clock,
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()?,
        }))
    }

    pub fn from_config(cfg: &AuthorityConfig, clock: Arc<dyn Clock>) -> anyhow::Result<Arc<Self>> {
        let read = |p: &std::path::Path| {
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
        };
        let public: AuthorityPublic = serde_json::from_str(&read(&cfg.public_file)?)?;
        let share: AuthorityShare = serde_json::from_str(&read(&cfg.share_file)?)?;
        let store = match &cfg.store {
            Some(p) => KvStore::open(p).with_context(|| format!("opening {}", p.display()))?,
            None => KvStore::memory(),
        };
        let opts = AuthorityOptions {
            idp_url: cfg.idp_url.clone(),
            idp_token: cfg.idp_token.clone(),
            rp_tokens: cfg.rp_tokens.clone(),
            admin_token: cfg.admin_token.clone(),
        };
        Self::new(opts, public, share, store, clock)
    }

    pub fn index(&self) -> u32 {
        self.share.index
    }

    pub fn case(&self, id: &str) -> Option<CaseRecord> {
        self.store.get(&format!("case/{id}"))
    }

    fn check_rp(&self, headers: &HeaderMap) -> ApiResult<()> {
        match bearer(headers) {
            Some(t) if self.opts.rp_tokens.iter().any(|x| x == t) => Ok(()),
            _ => Err(ApiError::unauthorized()),
        }
    }

    async fn lookup(&self, h_gamma: &G1) -> anyhow::Result<Option<String>> {
        let resp = self
            .http
            .post(format!(
                "{}/lookup",
                self.opts.idp_url.trim_end_matches('/')
            ))
            .bearer_auth(&self.opts.idp_token)
            .header(header::CONTENT_TYPE, http::BINARY)
            .body(h_gamma.to_bytes())
            .send()
            .await?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            return Ok(None);
        }
        let r: LookupResponse = resp.error_for_status()?.json().await?;
        Ok(Some(r.login))
    }
}

pub fn router(state: Arc<AuthorityState>) -> Router {
    Router::new()
        .route("/partial", post(post_partial))
        .route("/recover", post(post_recover))
        .route("/cases/:id", get(get_case))
        .with_state(state)
}

async fn post_partial(
    State(st): State<Arc<AuthorityState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    st.check_rp(&headers)?;
    let report: RetrievalReport = decode(&headers, &body)?;
    tracing::info!(
        case = report.case_id,
        domain = report.domain,
        account = report.account_id,
        "partial decryption requested"
    );
    let st2 = st.clone();
    let partial =
        blocking(move || partial_decrypt(&st2.params, &st2.share, &report.token, &mut OsRng))
            .await?;
    Ok(encode(
        StatusCode::OK,
        Format::for_reply(&headers),
        &partial,
    ))
}

fn combine_error(e: RetrievalError) -> Response {
    let (code, index) = match e {
        RetrievalError::InvalidPartial(i) => ("invalid-partial", Some(i)),
        RetrievalError::DuplicateIndex(i) => ("duplicate-partial", Some(i)),
        RetrievalError::UnknownAuthority(i) => ("unknown-authority", Some(i)),
        RetrievalError::BelowThreshold { .. } => ("below-threshold", None),
        RetrievalError::InvalidThreshold { .. } => ("invalid-threshold", None),
    };
    (
        StatusCode::UNPROCESSABLE_ENTITY,
        Json(serde_json::json!({ "error": code, "index": index, "message": e.to_string() })),
    )
        .into_response()
}

async fn post_recover(
    State(st): State<Arc<AuthorityState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    st.check_rp(&headers)?;
    let report: RetrievalReport = decode(&headers, &body)?;
    let st2 = st.clone();
    let r2 = report.clone();
    let combined =
        blocking(move || combine(&st2.params, &st2.public, &r2.token, &r2.partials)).await?;
    let h_gamma = match combined {
        Ok(h) => h,
        Err(e) => return Ok(combine_error(e)),
    };
    let login = st.lookup(&h_gamma).await.map_err(|e| {
        ApiError::new(
            StatusCode::BAD_GATEWAY,
            "idp-unavailable",
            format!("lookup failed: {e}"),
        )
    })?;
    let case = CaseRecord {
        case_id: report.case_id.clone(),
        domain: report.domain.clone(),
        account_id: report.account_id.clone(),
        login,
        opened: st.clock.now(),
    };
    st.store
        .put(&format!("case/{}", case.case_id), &case)
        .map_err(ApiError::internal)?;
    tracing::warn!(
        case = case.case_id,
        resolved = case.login.is_some(),
        "identity recovery completed"
    );
    Ok(Json(RecoverResponse {
        case_id: case.case_id,
        resolved: case.login.is_some(),
    })
    .into_response())
}

async fn get_case(
    State(st): State<Arc<AuthorityState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<CaseRecord>> {
    if bearer(&headers) != Some(st.opts.admin_token.as_str()) {
        return Err(ApiError::unauthorized());
    }
    st.case(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-case", "no such case"))
}
