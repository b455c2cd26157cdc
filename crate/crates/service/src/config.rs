//! Declarative TOML configuration, one file per role.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use elpasso_core::protocol::SignOnPolicy;
use elpasso_core::pscred::{AttributeSchema, AttributeValue};
use serde::{Deserialize, Serialize};

fn default_validity() -> u64 {
    7
}

fn default_session_ttl() -> u64 {
    3600
}

fn default_nonce_ttl() -> u64 {
    300
}

fn default_pk_ttl() -> u64 {
    3600
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InfoValue {
    Int(u64),
    Text(String),
}

impl InfoValue {
    /// Coerces to the encoding the schema declares for `label`.
    pub fn to_attribute(
        &self,
        schema: &AttributeSchema,
        label: &str,
    ) -> anyhow::Result<AttributeValue> {
        let enc = schema
            .index_of(label)
            .and_then(|i| schema.get(i))
            .map(|a| a.encoding)
            .with_context(|| format!("attribute {label:?} is not in the issuer schema"))?;
        let raw = match self {
            Self::Int(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        };
        AttributeValue::parse(&raw, enc)
            .with_context(|| format!("value {raw:?} does not fit attribute {label:?}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSeed {
    pub login: String,
    pub password: String,
    #[serde(default)]
    pub info: BTreeMap<String, InfoValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdpConfig {
    pub name: String,
    pub listen: SocketAddr,
    pub key_file: PathBuf,
    #[serde(default)]
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
    #[serde(default = "default_validity")]
    pub validity_days: u64,
    #[serde(default = "default_session_ttl")]
    pub session_ttl: u64,
    /// Bearer tokens accepted on `/lookup`.
    #[serde(default)]
    pub authority_tokens: Vec<String>,
    #[serde(default)]
    pub users: Vec<UserSeed>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdpEndpoint {
    pub name: String,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorityEndpoints {
    /// JSON file holding the authorities' public descriptor.
    pub public_file: PathBuf,
    /// Base URL per authority, in share-index order.
    pub endpoints: Vec<String>,
    pub token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpConfig {
    pub domain: String,
    pub listen: SocketAddr,
    #[serde(default)]
    pub store: Option<PathBuf>,
    #[serde(default = "default_nonce_ttl")]
    pub nonce_ttl: u64,
    #[serde(default = "default_pk_ttl")]
    pub pk_cache_ttl: u64,
    #[serde(default)]
    pub policy: SignOnPolicy,
    #[serde(default)]
    pub idps: Vec<IdpEndpoint>,
    #[serde(default)]
    pub authority: Option<AuthorityEndpoints>,
    /// Bearer token for `/report`; open when unset.
    #[serde(default)]
    pub admin_token: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorityConfig {
    pub listen: SocketAddr,
    pub public_file: PathBuf,
    pub share_file: PathBuf,
    pub idp_url: String,
    pub idp_token: String,
    #[serde(default)]
    pub rp_tokens: Vec<String>,
    pub admin_token: String,
    #[serde(default)]
    pub store: Option<PathBuf>,
}

fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Relative paths inside a config file are taken relative to that file.
fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl IdpConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: Self = load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut c.key_file);
        c.store.iter_mut().for_each(|p| rebase(base, p));
        c.audit_log.iter_mut().for_each(|p| rebase(base, p));
        Ok(c)
    }
}

impl RpConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: Self = load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.store.iter_mut().for_each(|p| rebase(base, p));
        if let Some(a) = c.authority.as_mut() {
            rebase(base, &mut a.public_file);
        }
        c.validate()?;
        Ok(c)
    }

    /// Accountability must be announced together with its authority set.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.policy.require_retrieval && self.authority.is_none() {
            bail!("policy.require_retrieval needs an [authority] section");
        }
        if self.idps.is_empty() {
            bail!("at least one [[idps]] entry is required");
        }
        Ok(())
    }
}

impl AuthorityConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: Self = load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut c.public_file);
        rebase(base, &mut c.share_file);
        c.store.iter_mut().for_each(|p| rebase(base, p));
        Ok(c)
    }
}
