use elpasso_core::protocol::ProtocolError;
use elpasso_service::ClientError;
use thiserror::Error;

use crate::keystore::KeystoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Keystore(#[from] KeystoreError),
    #[error("{0}; check that the server is running and retry")]
    Network(String),
    #[error("{0}")]
    Rejected(String),
    #[error(
        "credential from {issuer} expired on day {day}; run `elpasso fetch-credential --idp {url}`"
    )]
    Expired {
        issuer: String,
        day: u64,
        url: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Other(_) => 1,
            Self::Keystore(_) => 3,
            Self::Network(_) => 4,
            Self::Rejected(_) => 5,
            Self::Expired { .. } => 6,
            Self::Invalid(_) => 7,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Other(_) => "error",
            Self::Keystore(_) => "keystore",
            Self::Network(_) => "network",
            Self::Rejected(_) => "rejected",
            Self::Expired { .. } => "expired",
            Self::Invalid(_) => "invalid-input",
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Network(m) => Self::Network(m),
            ClientError::Status { status, .. } if status >= 500 => Self::Network(e.to_string()),
            ClientError::Status { .. } => Self::Rejected(e.to_string()),
            ClientError::Decode(m) => Self::Other(format!("undecodable response: {m}")),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::UnknownInfo(_)
            | ProtocolError::AbsentInfo(_)
            | ProtocolError::ForbiddenDisclosure(_)
            | ProtocolError::UnsupportedPredicate(_)
            | ProtocolError::PredicateFalse(_)
            | ProtocolError::TwoFactorUnsupported
            | ProtocolError::FingerprintMismatch => Self::Invalid(e.to_string()),
            ProtocolError::InvalidCredential | ProtocolError::EnrollmentDecrypt => {
                Self::Rejected(e.to_string())
            }
            _ => Self::Other(e.to_string()),
        }
    }
}

impl From<elpasso_service::flows::FlowError> for CliError {
    fn from(e: elpasso_service::flows::FlowError) -> Self {
        use elpasso_service::flows::FlowError;
        match e {
            FlowError::Client(c) => c.into(),
            FlowError::Protocol(p) => p.into(),
        }
    }
}
