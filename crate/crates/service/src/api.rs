//! JSON bodies for the endpoints that carry no protocol message.

use elpasso_core::groups::G1;
use elpasso_core::protocol::SignOnPolicy;
use elpasso_core::wire::{hex_bytes, hex_elem};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRequest {
    pub login: String,
    pub password: String,
    pub device_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionResponse {
    pub token: String,
    pub expires: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdpMeta {
    pub name: String,
    pub fingerprint: String,
    pub validity_days: u64,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LookupRequest {
    #[serde(with = "hex_elem")]
    pub h_gamma: G1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LookupResponse {
    pub login: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceRequest {
    pub device_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorityAnnouncement {
    pub threshold: usize,
    pub authorities: usize,
    #[serde(with = "hex_elem")]
    pub y: G1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignOnMeta {
    pub domain: String,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    pub nonce_ttl: u64,
    pub policy: SignOnPolicy,
    pub idps: Vec<String>,
    #[serde(default)]
    pub authority: Option<AuthorityAnnouncement>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRequest {
    pub account_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportOutcome {
    pub case_id: String,
    pub partials: usize,
    pub resolved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoverResponse {
    pub case_id: String,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub domain: String,
    pub account_id: String,
    pub login: Option<String>,
    pub opened: u64,
}
