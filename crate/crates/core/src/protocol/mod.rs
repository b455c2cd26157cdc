//! Message-level sign-on protocol.
//!
//! Setup phase: [`request_id`] → [`provide_id`] → [`unblind_id`].
//! Sign-on phase: [`prove_id`] → [`verify_id`], with RP state held in a
//! [`NonceCache`] and an [`AccountTable`]. Device enrollment lives in
//! [`enroll`], secret rotation in [`rotate_secret`] / [`verify_rotation`].

mod accounts;
pub mod enroll;
mod report;
mod setup;
mod signon;

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::pscred::CredError;
use crate::wire::WireError;

pub use accounts::{
    check_rotation, check_signon, verify_id, verify_rotation, AccountAction, AccountRecord,
    AccountTable, NonceCache, PendingFactor, SignOnPolicy, SignOnResult, NONCE_LEN,
};
pub use report::RetrievalReport;
pub use setup::{
    provide_id, request_id, sso_schema, unblind_id, BlindedCredentialMsg, CredentialBundle,
    DeviceEntry, IssuancePolicy, RequestIdMsg, SsoLayout, UserRecord, UserSecrets, DEVICE_SECRET,
    EXPIRY, GAMMA, SECRET,
};
pub use signon::{
    derive_pseudonym, prove_id, rotate_secret, verify_signon, Disclosure, ExpiryRule, Purpose,
    RejectReason, RotationRequest, RpSession, SignOnFlags, SignOnRequest, VerifiedSignOn,
};

pub const SECONDS_PER_DAY: u64 = 86_400;

/// Day index (days since the unix epoch) of a unix timestamp.
pub fn day_of(unix_secs: u64) -> u64 {
    unix_secs / SECONDS_PER_DAY
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("schema is not a sign-on schema: {0}")]
    Schema(&'static str),
    #[error("unknown info attribute {0:?}")]
    UnknownInfo(String),
    #[error("info attribute {0:?} is not verified for this user")]
    UnverifiedInfo(String),
    #[error("credential has no value for {0:?}")]
    AbsentInfo(String),
    #[error("attribute {0:?} may not be disclosed")]
    ForbiddenDisclosure(String),
    #[error("unsupported predicate {0:?}: only disclosure and equality are supported")]
    UnsupportedPredicate(String),
    #[error("predicate on {0:?} does not hold for the credential")]
    PredicateFalse(String),
    #[error("credential expired on day {0}")]
    Expired(u64),
    #[error("device {0:?} is revoked")]
    RevokedDevice(String),
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("credential schema has no device secret slot")]
    TwoFactorUnsupported,
    #[error("retrieval requested but no authority key is known")]
    NoAuthorityKey,
    #[error("request proof does not verify")]
    BadProof,
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("issued credential does not verify")]
    InvalidCredential,
    #[error("enrollment fingerprint mismatch")]
    FingerprintMismatch,
    #[error("enrollment ciphertext failed authentication")]
    EnrollmentDecrypt,
    #[error(transparent)]
    Cred(#[from] CredError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Source of unix time in seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Settable clock for tests and simulations.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(unix_secs: u64) -> Self {
        Self(AtomicU64::new(unix_secs))
    }

    pub fn set(&self, unix_secs: u64) {
        self.0.store(unix_secs, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

macro_rules! envelope {
    ($($t:ty),* $(,)?) => {$(
        impl crate::wire::Envelope for $t {
            fn encode(&self) -> Vec<u8> {
                self.to_bytes()
            }

            fn decode(bytes: &[u8]) -> Result<Self, String> {
                Self::from_bytes(bytes).map_err(|e| e.to_string())
            }
        }
    )*};
}

envelope!(
    RequestIdMsg,
    BlindedCredentialMsg,
    SignOnRequest,
    SignOnResult,
    RotationRequest,
    RetrievalReport,
    enroll::EnrollInit,
    enroll::EnrollApprove,
    enroll::EnrollComplete,
    crate::retrieval::PartialDecryption,
    crate::retrieval::RetrievalToken,
    crate::pscred::IdpPublicKey,
    crate::pscred::Credential,
);

#[cfg(test)]
mod tests;
