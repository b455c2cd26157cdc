//! Identity provider: user store, blind issuance, public key, device registry
//! and the `h^γ` reverse lookup used by the retrieval authorities.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context};
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elpasso_core::groups::{GroupElement, G1};
use elpasso_core::protocol::enroll::{EnrollApprove, EnrollComplete, EnrollInit};
use elpasso_core::protocol::{
    provide_id, Clock, DeviceEntry, IssuancePolicy, ProtocolError, RequestIdMsg, SsoLayout,
    UserRecord,
};
use elpasso_core::pscred::{AttributeValue, IdpKeyPair};
use parking_lot::{Mutex, RwLock};
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};

use crate::api::{
    DeviceRequest, IdpMeta, LookupRequest, LookupResponse, SessionRequest, SessionResponse,
};
use crate::config::IdpConfig;
use crate::http::{self, bearer, blocking, decode, encode, ApiError, ApiResult, Format};
use crate::store::KvStore;

#[derive(Debug, Clone)]
pub struct IdpOptions {
    pub name: String,
    pub validity_days: u64,
    pub session_ttl: u64,
    pub authority_tokens: Vec<String>,
    pub audit_log: Option<PathBuf>,
}

impl IdpOptions {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            validity_days: 7,
            session_ttl: 3600,
            authority_tokens: vec![],
            audit_log: None,
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct StoredUser {
    record: UserRecord,
    password_hash: String,
}

struct Session {
    login: String,
    device_id: String,
    expires: u64,
}

struct PendingEnroll {
    init: EnrollInit,
    complete: Option<EnrollComplete>,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    at: u64,
    login: &'a str,
    device: &'a str,
    info: &'a [String],
    two_fa: bool,
}

pub struct IdpState {
    opts: IdpOptions,
    kp: Arc<IdpKeyPair>,
    pk_bytes: Vec<u8>,
    etag: String,
    store: KvStore,
    clock: Arc<dyn Clock>,
    users: RwLock<HashMap<String, StoredUser>>,
    by_h_gamma: RwLock<HashMap<Vec<u8>, String>>,
    sessions: Mutex<HashMap<String, Session>>,
    enrollments: Mutex<HashMap<(String, String), PendingEnroll>>,
    audit: Mutex<Option<File>>,
    issued: AtomicU64,
}

impl IdpState {
    pub fn new(
        opts: IdpOptions,
        kp: IdpKeyPair,
        store: KvStore,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Arc<Self>> {
        SsoLayout::of(&kp.pk.schema).context("issuer key does not carry a sign-on schema")?;
        let pk_bytes = kp.pk.to_bytes();
        let etag = format!("\"{}\"", hex::encode(&kp.pk.fingerprint()[..16]));
        let mut users = HashMap::new();
        let mut by_h_gamma = HashMap::new();
        for (key, u) in store.scan::<StoredUser>("user/") {
            if !u.record.is_consistent() {
                tracing::warn!(key, "skipping inconsistent user record");
                continue;
            }
            by_h_gamma.insert(u.record.h_gamma.to_bytes(), u.record.login.clone());
            users.insert(u.record.login.clone(), u);
        }
        let audit = match &opts.audit_log {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("opening audit log {}", p.display()))?,
            ),
            None => None,
        };
        Ok(Arc::new(Self {
            opts,
            kp: Arc::new(kp),
            pk_bytes,
            etag,
            store,
            clock,
            users: RwLock::new(users),
            by_h_gamma: RwLock::new(by_h_gamma),
            sessions: Mutex::new(HashMap::new()),
            enrollments: Mutex::new(HashMap::new()),
            audit: Mutex::new(audit),
            issued: AtomicU64::new(0),
        }))
    }

    pub fn from_config(cfg: &IdpConfig, clock: Arc<dyn Clock>) -> anyhow::Result<Arc<Self>> {
        let bytes = std::fs::read(&cfg.key_file)
            .with_context(|| format!("reading {}", cfg.key_file.display()))?;
        let kp = IdpKeyPair::from_bytes(&bytes).context("decoding issuer key")?;
        let store = match &cfg.store {
            Some(p) => KvStore::open(p).with_context(|| format!("opening {}", p.display()))?,
            None => KvStore::memory(),
        };
        let opts = IdpOptions {
            name: cfg.name.clone(),
            validity_days: cfg.validity_days,
            session_ttl: cfg.session_ttl,
            authority_tokens: cfg.authority_tokens.clone(),
            audit_log: cfg.audit_log.clone(),
        };
        let state = Self::new(opts, kp, store, clock)?;
        for u in &cfg.users {
            if state.has_user(&u.login) {
                continue;
            }
            let info = u
                .info
                .iter()
                .map(|(k, v)| Ok((k.clone(), v.to_attribute(&state.kp.pk.schema, k)?)))
                .collect::<anyhow::Result<_>>()?;
            state.add_user(&u.login, &u.password, info)?;
        }
        Ok(state)
    }

    pub fn name(&self) -> &str {
        &self.opts.name
    }

    pub fn public_key(&self) -> &elpasso_core::IdpPublicKey {
        &self.kp.pk
    }

    pub fn has_user(&self, login: &str) -> bool {
        self.users.read().contains_key(login)
    }

    pub fn issued(&self) -> u64 {
        self.issued.load(Ordering::Relaxed)
    }

    /// `h^γ` of a user, for tests and audits.
    pub fn h_gamma(&self, login: &str) -> Option<G1> {
        self.users.read().get(login).map(|u| u.record.h_gamma)
    }

    /// Registers a user with verified info attributes.
    pub fn add_user(
        &self,
        login: &str,
        password: &str,
        info: BTreeMap<String, AttributeValue>,
    ) -> anyhow::Result<()> {
        let schema = &self.kp.pk.schema;
        let layout = SsoLayout::of(schema)?;
        for (label, v) in &info {
            match schema.index_of(label) {
                Some(i) if layout.info.contains(&i) => {
                    if schema.get(i).map(|a| a.encoding) != Some(v.encoding()) {
                        bail!("attribute {label:?} has the wrong encoding");
                    }
                }
                _ => bail!("attribute {label:?} is not an info attribute of this issuer"),
            }
        }
        let salt = SaltString::generate(&mut OsRng);
        let password_hash = Argon2::default()
            .hash_password(password.as_bytes(), &salt)
            .map_err(|e| anyhow::anyhow!("hashing password: {e}"))?
            .to_string();
        let record = UserRecord::new(login, info, &mut OsRng);
        let mut users = self.users.write();
        if users.contains_key(login) {
            bail!("user {login:?} already exists");
        }
        let stored = StoredUser {
            record,
            password_hash,
        };
        self.store.put(&format!("user/{login}"), &stored)?;
        self.by_h_gamma
            .write()
            .insert(stored.record.h_gamma.to_bytes(), login.to_string());
        users.insert(login.to_string(), stored);
        Ok(())
    }

    fn session(&self, headers: &HeaderMap) -> ApiResult<(String, String)> {
        let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
        let now = self.clock.now();
        let sessions = self.sessions.lock();
        match sessions.get(token) {
            Some(s) if s.expires > now => Ok((s.login.clone(), s.device_id.clone())),
            _ => Err(ApiError::unauthorized()),
        }
    }

    fn device_active(&self, login: &str, device: &str) -> ApiResult<()> {
        let users = self.users.read();
        let user = users.get(login).ok_or_else(ApiError::unauthorized)?;
        match user.record.devices.get(device) {
            Some(d) if !d.revoked => Ok(()),
            Some(_) => Err(revoked(device)),
            None => Err(ApiError::unauthorized()),
        }
    }

    fn update_user(&self, login: &str, f: impl FnOnce(&mut UserRecord)) -> ApiResult<()> {
        let mut users = self.users.write();
        let u = users.get_mut(login).ok_or_else(ApiError::unauthorized)?;
        let mut next = u.clone();
        f(&mut next.record);
        self.store
            .put(&format!("user/{login}"), &next)
            .map_err(ApiError::internal)?;
        *u = next;
        Ok(())
    }

    fn audit(&self, entry: &AuditEntry<'_>) {
        tracing::info!(
            login = entry.login,
            device = entry.device,
            info = ?entry.info,
            "credential issued"
        );
        if let Some(f) = self.audit.lock().as_mut() {
            let mut line = serde_json::to_vec(entry).expect("audit entry serializes");
            line.push(b'\n');
            if let Err(e) = f.write_all(&line) {
                tracing::error!(error = %e, "audit log write failed");
            }
        }
    }
}

fn revoked(device: &str) -> ApiError {
    ApiError::new(
        StatusCode::FORBIDDEN,
        "revoked-device",
        format!("device {device:?} is revoked"),
    )
}

fn protocol_error(e: ProtocolError) -> ApiError {
    match e {
        ProtocolError::RevokedDevice(d) => revoked(&d),
        ProtocolError::UnknownDevice(d) => ApiError::new(
            StatusCode::FORBIDDEN,
            "unknown-device",
            format!("device {d:?} is not registered"),
        ),
        ProtocolError::BadProof => ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "bad-proof",
            "request proof does not verify",
        ),
        ProtocolError::UnknownInfo(_) | ProtocolError::UnverifiedInfo(_) => ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unverified-info",
            e.to_string(),
        ),
        e => ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid-request",
            e.to_string(),
        ),
    }
}

pub fn router(state: Arc<IdpState>) -> Router {
    Router::new()
        .route("/pk", get(get_pk))
        .route("/meta", get(get_meta))
        .route("/session", post(post_session))
        .route("/request-id", post(post_request_id))
        .route("/lookup", post(post_lookup))
        .route("/devices/enroll-init", post(post_enroll_init))
        .route("/devices/enroll-pending", get(get_enroll_pending))
        .route("/devices/enroll-approve", post(post_enroll_approve))
        .route("/devices/enroll-complete/:id", get(get_enroll_complete))
        .route("/devices/revoke", post(post_revoke))
        .with_state(state)
}

async fn get_pk(State(st): State<Arc<IdpState>>, headers: HeaderMap) -> Response {
    let cache = [
        (
            header::CACHE_CONTROL,
            HeaderValue::from_static("public, max-age=3600"),
        ),
        (
            header::ETAG,
            HeaderValue::from_str(&st.etag).expect("hex etag"),
        ),
    ];
    if headers
        .get(header::IF_NONE_MATCH)
        .is_some_and(|v| v.as_bytes() == st.etag.as_bytes())
    {
        return (StatusCode::NOT_MODIFIED, cache).into_response();
    }
    match Format::for_reply(&headers) {
        Format::Json => (
            cache,
            Json(serde_json::json!({ "name": st.opts.name, "pk": hex::encode(&st.pk_bytes) })),
        )
            .into_response(),
        Format::Binary => (
            cache,
            [(header::CONTENT_TYPE, HeaderValue::from_static(http::BINARY))],
            st.pk_bytes.clone(),
        )
            .into_response(),
    }
}

async fn get_meta(State(st): State<Arc<IdpState>>) -> Json<IdpMeta> {
    let schema = &st.kp.pk.schema;
    let layout = SsoLayout::of(schema).expect("checked at startup");
    Json(IdpMeta {
        name: st.opts.name.clone(),
        fingerprint: hex::encode(st.kp.pk.fingerprint()),
        validity_days: st.opts.validity_days,
        attributes: layout
            .info
            .iter()
            .filter_map(|i| schema.get(*i).map(|a| a.label.clone()))
            .collect(),
    })
}

async fn post_session(
    State(st): State<Arc<IdpState>>,
    body: Bytes,
) -> ApiResult<Json<SessionResponse>> {
    let req: SessionRequest = http::json_body(&body)?;
    if req.device_id.is_empty() || req.device_id.len() > 128 {
        return Err(ApiError::bad_request("device_id must be 1 to 128 bytes"));
    }
    let hash = st
        .users
        .read()
        .get(&req.login)
        .map(|u| u.password_hash.clone())
        .ok_or_else(ApiError::unauthorized)?;
    let password = req.password.clone();
    let ok = blocking(move || {
        PasswordHash::new(&hash).is_ok_and(|h| {
            Argon2::default()
                .verify_password(password.as_bytes(), &h)
                .is_ok()
        })
    })
    .await?;
    if !ok {
        return Err(ApiError::unauthorized());
    }
    let known = st
        .users
        .read()
        .get(&req.login)
        .and_then(|u| u.record.devices.get(&req.device_id).cloned());
    match known {
        Some(d) if d.revoked => return Err(revoked(&req.device_id)),
        Some(_) => {}
        None => st.update_user(&req.login, |r| {
            r.devices
                .insert(req.device_id.clone(), DeviceEntry::default());
        })?,
    }
    let token = http::random_token();
    let expires = st.clock.now() + st.opts.session_ttl;
    st.sessions.lock().insert(
        token.clone(),
        Session {
            login: req.login,
            device_id: req.device_id,
            expires,
        },
    );
    Ok(Json(SessionResponse { token, expires }))
}

async fn post_request_id(
    State(st): State<Arc<IdpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let (login, device) = st.session(&headers)?;
    let msg: RequestIdMsg = decode(&headers, &body)?;
    let user = st
        .users
        .read()
        .get(&login)
        .map(|u| u.record.clone())
        .ok_or_else(ApiError::unauthorized)?;
    let now = st.clock.now();
    let policy = IssuancePolicy {
        validity_days: st.opts.validity_days,
    };
    let kp = st.kp.clone();
    let device2 = device.clone();
    let msg2 = msg.clone();
    let out = blocking(move || provide_id(&kp, &user, &device2, &msg2, now, &policy, &mut OsRng))
        .await?
        .map_err(protocol_error)?;
    st.issued.fetch_add(1, Ordering::Relaxed);
    st.audit(&AuditEntry {
        at: now,
        login: &login,
        device: &device,
        info: &msg.info,
        two_fa: msg.two_fa,
    });
    Ok(encode(StatusCode::OK, Format::for_reply(&headers), &out))
}

async fn post_lookup(
    State(st): State<Arc<IdpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<LookupResponse>> {
    let token = bearer(&headers).ok_or_else(ApiError::unauthorized)?;
    if !st.opts.authority_tokens.iter().any(|t| t == token) {
        return Err(ApiError::unauthorized());
    }
    let h_gamma = match Format::of_request(&headers) {
        Format::Json => http::json_body::<LookupRequest>(&body)?.h_gamma,
        Format::Binary => {
            G1::from_slice(&body).map_err(|e| ApiError::bad_request(format!("h_gamma: {e}")))?
        }
    };
    let login = st
        .by_h_gamma
        .read()
        .get(&h_gamma.to_bytes())
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown", "no matching user"))?;
    tracing::info!(login, "identity lookup");
    Ok(Json(LookupResponse { login }))
}

async fn post_enroll_init(
    State(st): State<Arc<IdpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let (login, device) = st.session(&headers)?;
    st.device_active(&login, &device)?;
    let init: EnrollInit = decode(&headers, &body)?;
    if init.device_id != device {
        return Err(ApiError::bad_request(
            "enrollment must be started from the enrolling device",
        ));
    }
    st.enrollments.lock().insert(
        (login, device),
        PendingEnroll {
            init,
            complete: None,
        },
    );
    Ok((
        StatusCode::ACCEPTED,
        Json(serde_json::json!({ "status": "pending" })),
    )
        .into_response())
}

async fn get_enroll_pending(
    State(st): State<Arc<IdpState>>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<EnrollInit>>> {
    let (login, device) = st.session(&headers)?;
    st.device_active(&login, &device)?;
    let pending = st
        .enrollments
        .lock()
        .iter()
        .filter(|((l, _), p)| *l == login && p.complete.is_none())
        .map(|(_, p)| p.init.clone())
        .collect();
    Ok(Json(pending))
}

async fn post_enroll_approve(
    State(st): State<Arc<IdpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let (login, device) = st.session(&headers)?;
    st.device_active(&login, &device)?;
    let approve: EnrollApprove = decode(&headers, &body)?;
    if approve.device_id == device {
        return Err(ApiError::unauthorized());
    }
    {
        let mut pending = st.enrollments.lock();
        let elsewhere = pending
            .keys()
            .any(|(l, d)| *d == approve.device_id && *l != login);
        match pending.get_mut(&(login.clone(), approve.device_id.clone())) {
            Some(p) => {
                if p.init.device_pk != approve.device_pk {
                    return Err(ApiError::new(
                        StatusCode::CONFLICT,
                        "key-mismatch",
                        "approval is for a different device key",
                    ));
                }
                p.complete = Some(EnrollComplete::from(&approve));
            }
            None if elsewhere => return Err(ApiError::unauthorized()),
            None => {
                return Err(ApiError::new(
                    StatusCode::NOT_FOUND,
                    "unknown-device",
                    "no pending enrollment for that device",
                ))
            }
        }
    }
    tracing::info!(login, device = approve.device_id, "enrollment approved");
    Ok(Json(serde_json::json!({ "status": "relayed" })))
}

async fn get_enroll_complete(
    State(st): State<Arc<IdpState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let (login, device) = st.session(&headers)?;
    if device != id {
        return Err(ApiError::unauthorized());
    }
    let done = st
        .enrollments
        .lock()
        .get(&(login, id))
        .and_then(|p| p.complete.clone())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "pending", "not yet approved"))?;
    Ok(encode(StatusCode::OK, Format::for_reply(&headers), &done))
}

async fn post_revoke(
    State(st): State<Arc<IdpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let (login, device) = st.session(&headers)?;
    st.device_active(&login, &device)?;
    let req: DeviceRequest = http::json_body(&body)?;
    let current = st
        .users
        .read()
        .get(&login)
        .and_then(|u| u.record.devices.get(&req.device_id).cloned());
    match current {
        None => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown-device",
                "no such device",
            ))
        }
        Some(d) if d.revoked => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "already-revoked",
                "device is already revoked",
            ))
        }
        Some(_) => {}
    }
    st.update_user(&login, |r| {
        r.devices
            .insert(req.device_id.clone(), DeviceEntry { revoked: true });
    })?;
    tracing::warn!(login, device = req.device_id, "device revoked");
    Ok(Json(serde_json::json!({ "status": "revoked" })))
}
