//! Relying party: nonces, sign-on verification, pseudonymous accounts and
//! retrieval reports to the authorities.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use elpasso_core::groups::{GroupElement, PublicParams};
use elpasso_core::protocol::{
    check_rotation, check_signon, AccountRecord, AccountTable, Clock, NonceCache, RejectReason,
    RetrievalReport, RotationRequest, SignOnPolicy, SignOnRequest, SignOnResult, SsoLayout,
};
use elpasso_core::retrieval::{verify_partial, AuthorityPublic, PartialDecryption};
use elpasso_core::wire::Envelope;
use elpasso_core::IdpPublicKey;
use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::api::{
    AuthorityAnnouncement, RecoverResponse, ReportOutcome, ReportRequest, SignOnMeta,
};
use crate::config::{IdpEndpoint, RpConfig};
use crate::http::{self, bearer, decode, encode, ApiError, ApiResult, Format};
use crate::store::KvStore;

/// The authorities as an RP sees them.
#[derive(Debug, Clone)]
pub struct AuthoritySet {
    pub public: AuthorityPublic,
    /// Base URL of authority `i + 1`.
    pub endpoints: Vec<String>,
    pub token: String,
}

#[derive(Debug, Clone)]
pub struct RpOptions {
    pub domain: String,
    pub nonce_ttl: u64,
    pub pk_cache_ttl: u64,
    pub policy: SignOnPolicy,
    pub idps: Vec<IdpEndpoint>,
    pub authority: Option<AuthoritySet>,
    pub admin_token: Option<String>,
}

impl RpOptions {
    pub fn new(domain: impl Into<String>, idps: Vec<IdpEndpoint>) -> Self {
        Self {
            domain: domain.into(),
            nonce_ttl: 300,
            pk_cache_ttl: 3600,
            policy: SignOnPolicy::default(),
            idps,
            authority: None,
            admin_token: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredCase {
    case_id: String,
    account_id: String,
    partials: usize,
    resolved: bool,
    at: u64,
}

struct CachedKey {
    pk: Arc<IdpPublicKey>,
    fetched: u64,
}

pub struct RpState {
    opts: RpOptions,
    params: Arc<PublicParams>,
    store: KvStore,
    clock: Arc<dyn Clock>,
    nonces: Mutex<NonceCache>,
    accounts: Mutex<AccountTable>,
    pk_cache: Mutex<HashMap<String, CachedKey>>,
    idp_fetches: AtomicU64,
    http: reqwest::Client,
}

impl RpState {
    pub fn new(
        opts: RpOptions,
        store: KvStore,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Arc<Self>> {
        if opts.policy.require_retrieval && opts.authority.is_none() {
            anyhow::bail!("retrieval is required but no authority set is configured");
        }
        let records = store
            .scan::<AccountRecord>("account/")
            .into_iter()
            .map(|(_, r)| r);
        let blocked = store
            .scan::<String>("blocked/")
            .into_iter()
            .filter_map(|(_, h)| {
                hex::decode(h)
                    .ok()
                    .and_then(|b| elpasso_core::G1::from_slice(&b).ok())
            });
        let accounts = AccountTable::restore(records, blocked);
        Ok(Arc::new(Self {
            nonces: Mutex::new(NonceCache::new(opts.nonce_ttl)),
            opts,
            params: Arc::new(PublicParams::setup(128)?),
            store,
            clock,
            accounts: Mutex::new(accounts),
            pk_cache: Mutex::new(HashMap::new()),
            idp_fetches: AtomicU64::new(0),
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()?,
        }))
    }

    pub fn from_config(cfg: &RpConfig, clock: Arc<dyn Clock>) -> anyhow::Result<Arc<Self>> {
        cfg.validate()?;
        let authority = match &cfg.authority {
            Some(a) => {
                let text = std::fs::read_to_string(&a.public_file)
                    .with_context(|| format!("reading {}", a.public_file.display()))?;
                let public: AuthorityPublic = serde_json::from_str(&text)?;
                if public.authorities() != a.endpoints.len() {
                    anyhow::bail!(
                        "authority descriptor lists {} authorities but {} endpoints are configured",
                        public.authorities(),
                        a.endpoints.len()
                    );
                }
                Some(AuthoritySet {
                    public,
                    endpoints: a.endpoints.clone(),
                    token: a.token.clone(),
                })
            }
            None => None,
        };
        let store = match &cfg.store {
            Some(p) => KvStore::open(p).with_context(|| format!("opening {}", p.display()))?,
            None => KvStore::memory(),
        };
        let opts = RpOptions {
            domain: cfg.domain.clone(),
            nonce_ttl: cfg.nonce_ttl,
            pk_cache_ttl: cfg.pk_cache_ttl,
            policy: cfg.policy,
            idps: cfg.idps.clone(),
            authority,
            admin_token: cfg.admin_token.clone(),
        };
        Self::new(opts, store, clock)
    }

    pub fn domain(&self) -> &str {
        &self.opts.domain
    }

    /// Number of public-key fetches made to any IdP.
    pub fn idp_fetches(&self) -> u64 {
        self.idp_fetches.load(Ordering::Relaxed)
    }

    pub fn account_count(&self) -> usize {
        self.accounts.lock().len()
    }

    pub fn account(&self, id: &str) -> Option<AccountRecord> {
        self.accounts.lock().get(id).cloned()
    }

    fn authority_key(&self) -> Option<elpasso_core::G1> {
        self.opts.authority.as_ref().map(|a| a.public.y)
    }

    /// Cached issuer key, refreshed when older than the cache TTL. A stale key
    /// is never served: with the IdP unreachable the issuer is unknown.
    pub async fn issuer_key(&self, issuer: &str) -> Option<Arc<IdpPublicKey>> {
        let idp = self.opts.idps.iter().find(|i| i.name == issuer)?;
        let now = self.clock.now();
        if let Some(c) = self.pk_cache.lock().get(issuer) {
            if now.saturating_sub(c.fetched) < self.opts.pk_cache_ttl {
                return Some(c.pk.clone());
            }
        }
        self.idp_fetches.fetch_add(1, Ordering::Relaxed);
        let pk = match self.fetch_key(&idp.url).await {
            Ok(pk) => Arc::new(pk),
            Err(e) => {
                tracing::warn!(issuer, error = %e, "issuer key unavailable");
                self.pk_cache.lock().remove(issuer);
                return None;
            }
        };
        self.pk_cache.lock().insert(
            issuer.to_string(),
            CachedKey {
                pk: pk.clone(),
                fetched: now,
            },
        );
        Some(pk)
    }

    async fn fetch_key(&self, url: &str) -> anyhow::Result<IdpPublicKey> {
        let resp = self
            .http
            .get(format!("{}/pk", url.trim_end_matches('/')))
            .header(header::ACCEPT, http::BINARY)
            .send()
            .await?
            .error_for_status()?;
        let bytes = resp.bytes().await?;
        let pk = IdpPublicKey::from_bytes(&bytes)?;
        let pk = tokio::task::spawn_blocking(move || pk.is_consistent().then_some(pk))
            .await?
            .context("issuer key fails its pairing checks")?;
        SsoLayout::of(&pk.schema).context("issuer key has no sign-on schema")?;
        Ok(pk)
    }

    fn persist_account(&self, id: Option<&str>, accounts: &AccountTable) {
        if let Some(r) = id.and_then(|id| accounts.get(id)) {
            if let Err(e) = self.store.put(&format!("account/{}", r.id), r) {
                tracing::error!(error = %e, "persisting account failed");
            }
        }
    }

    pub async fn signon(&self, req: SignOnRequest) -> SignOnResult {
        let Some(pk) = self.issuer_key(&req.issuer).await else {
            return SignOnResult::reject(RejectReason::UnknownIdp);
        };
        let now = self.clock.now();
        let params = self.params.clone();
        let domain = self.opts.domain.clone();
        let y = self.authority_key();
        let policy = self.opts.policy;
        let checked = tokio::task::spawn_blocking(move || {
            check_signon(&params, &pk, &req, &domain, y.as_ref(), now, &policy).map(|v| (v, req))
        })
        .await;
        let (v, req) = match checked {
            Ok(Ok(x)) => x,
            Ok(Err(r)) => return SignOnResult::reject(r),
            Err(e) => {
                tracing::error!(error = %e, "verification task failed");
                return SignOnResult::reject(RejectReason::Malformed);
            }
        };
        if !self.nonces.lock().consume(&req.nonce, now) {
            return SignOnResult::reject(RejectReason::Replay);
        }
        let mut accounts = self.accounts.lock();
        let result = accounts.apply(&v, &policy, now);
        self.persist_account(result.account_id.as_deref(), &accounts);
        result
    }

    pub async fn rotate(&self, req: RotationRequest) -> SignOnResult {
        let Some(pk) = self.issuer_key(&req.old.issuer).await else {
            return SignOnResult::reject(RejectReason::UnknownIdp);
        };
        let now = self.clock.now();
        let params = self.params.clone();
        let domain = self.opts.domain.clone();
        let y = self.authority_key();
        let policy = self.opts.policy;
        let checked = tokio::task::spawn_blocking(move || {
            check_rotation(&params, &pk, &req, &domain, y.as_ref(), now, &policy).map(|v| (v, req))
        })
        .await;
        let ((ov, nv), req) = match checked {
            Ok(Ok(x)) => x,
            Ok(Err(r)) => return SignOnResult::reject(r),
            Err(e) => {
                tracing::error!(error = %e, "verification task failed");
                return SignOnResult::reject(RejectReason::Malformed);
            }
        };
        if !self.nonces.lock().consume(&req.old.nonce, now) {
            return SignOnResult::reject(RejectReason::Replay);
        }
        let mut accounts = self.accounts.lock();
        let result = accounts.apply_rotation(&ov, &nv, now);
        if result.accepted {
            if let Some(z) = ov.zeta {
                let h = hex::encode(z.to_bytes());
                if let Err(e) = self.store.put(&format!("blocked/{h}"), &h) {
                    tracing::error!(error = %e, "persisting blocklist failed");
                }
            }
        }
        self.persist_account(result.account_id.as_deref(), &accounts);
        result
    }

    /// Discloses an account's token to the authorities and asks them to recover the identity.
    pub async fn report(&self, account_id: &str) -> ApiResult<ReportOutcome> {
        let authority = self.opts.authority.as_ref().ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                "no-authority",
                "this relying party announces no authorities",
            )
        })?;
        let record = self.account(account_id).ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "unknown-account", "no such account")
        })?;
        let token = record.token.ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                "no-token",
                "account has no retrieval token",
            )
        })?;
        let mut id = [0u8; 12];
        OsRng.fill_bytes(&mut id);
        let mut report = RetrievalReport {
            case_id: hex::encode(id),
            domain: self.opts.domain.clone(),
            account_id: account_id.to_string(),
            token,
            partials: vec![],
        };
        let need = authority.public.threshold;
        for url in &authority.endpoints {
            if report.partials.len() >= need {
                break;
            }
            match self
                .post_envelope::<_, PartialDecryption>(url, "/partial", &authority.token, &report)
                .await
            {
                Ok(p) if verify_partial(&self.params, &authority.public, &token, &p) => {
                    report.partials.push(p)
                }
                Ok(p) => tracing::warn!(url, index = p.index, "authority sent an invalid partial"),
                Err(e) => tracing::warn!(url, error = %e, "authority unreachable"),
            }
        }
        if report.partials.len() < need {
            return Err(ApiError::new(
                StatusCode::BAD_GATEWAY,
                "below-threshold",
                format!(
                    "{} of {} required authorities answered",
                    report.partials.len(),
                    need
                ),
            ));
        }
        let mut resolved = None;
        for url in &authority.endpoints {
            match self.recover(url, &authority.token, &report).await {
                Ok(r) => {
                    resolved = Some(r.resolved);
                    break;
                }
                Err(e) => tracing::warn!(url, error = %e, "recovery request failed"),
            }
        }
        let resolved = resolved.ok_or_else(|| {
            ApiError::new(
                StatusCode::BAD_GATEWAY,
                "recovery-failed",
                "no authority completed the recovery",
            )
        })?;
        let case = StoredCase {
            case_id: report.case_id.clone(),
            account_id: account_id.to_string(),
            partials: report.partials.len(),
            resolved,
            at: self.clock.now(),
        };
        self.store
            .put(&format!("case/{}", case.case_id), &case)
            .map_err(ApiError::internal)?;
        Ok(ReportOutcome {
            case_id: case.case_id,
            partials: case.partials,
            resolved,
        })
    }

    async fn post_envelope<M: Envelope, R: Envelope>(
        &self,
        base: &str,
        path: &str,
        token: &str,
        msg: &M,
    ) -> anyhow::Result<R> {
        let resp = self
            .http
            .post(format!("{}{path}", base.trim_end_matches('/')))
            .bearer_auth(token)
            .header(header::CONTENT_TYPE, http::BINARY)
            .header(header::ACCEPT, http::BINARY)
            .body(msg.encode())
            .send()
            .await?
            .error_for_status()?;
        R::decode(&resp.bytes().await?).map_err(anyhow::Error::msg)
    }

    async fn recover(
        &self,
        base: &str,
        token: &str,
        report: &RetrievalReport,
    ) -> anyhow::Result<RecoverResponse> {
        let resp = self
            .http
            .post(format!("{}/recover", base.trim_end_matches('/')))
            .bearer_auth(token)
            .header(header::CONTENT_TYPE, http::BINARY)
            .body(report.encode())
            .send()
            .await?
            .error_for_status()?;
        Ok(resp.json().await?)
    }
}

pub fn router(state: Arc<RpState>) -> Router {
    Router::new()
        .route("/signon-meta", get(get_meta))
        .route("/signon", post(post_signon))
        .route("/rotate", post(post_rotate))
        .route("/report", post(post_report))
        .with_state(state)
}

async fn get_meta(State(st): State<Arc<RpState>>) -> Json<SignOnMeta> {
    let now = st.clock.now();
    let nonce = st.nonces.lock().issue(now, &mut OsRng);
    let authority = st
        .opts
        .authority
        .as_ref()
        .filter(|_| st.opts.policy.require_retrieval)
        .map(|a| AuthorityAnnouncement {
            threshold: a.public.threshold,
            authorities: a.public.authorities(),
            y: a.public.y,
        });
    Json(SignOnMeta {
        domain: st.opts.domain.clone(),
        nonce,
        nonce_ttl: st.opts.nonce_ttl,
        policy: st.opts.policy,
        idps: st.opts.idps.iter().map(|i| i.name.clone()).collect(),
        authority,
    })
}

fn result_response(headers: &HeaderMap, result: &SignOnResult) -> Response {
    let status = if result.accepted {
        StatusCode::OK
    } else {
        StatusCode::FORBIDDEN
    };
    encode(status, Format::for_reply(headers), result)
}

async fn post_signon(
    State(st): State<Arc<RpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: SignOnRequest = match decode(&headers, &body) {
        Ok(r) => r,
        Err(_) => {
            return Ok(result_response(
                &headers,
                &SignOnResult::reject(RejectReason::Malformed),
            ))
        }
    };
    let result = st.signon(req).await;
    Ok(result_response(&headers, &result))
}

async fn post_rotate(
    State(st): State<Arc<RpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: RotationRequest = match decode(&headers, &body) {
        Ok(r) => r,
        Err(_) => {
            return Ok(result_response(
                &headers,
                &SignOnResult::reject(RejectReason::Malformed),
            ))
        }
    };
    let result = st.rotate(req).await;
    Ok(result_response(&headers, &result))
}

async fn post_report(
    State(st): State<Arc<RpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ReportOutcome>> {
    if let Some(t) = &st.opts.admin_token {
        if bearer(&headers) != Some(t.as_str()) {
            return Err(ApiError::unauthorized());
        }
    }
    let req: ReportRequest = http::json_body(&body)?;
    let outcome = st.report(&req.account_id).await?;
    Ok(Json(outcome))
}
