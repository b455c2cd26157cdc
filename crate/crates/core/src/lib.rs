//! Privacy-preserving asynchronous single sign-on built on
//! Pointcheval–Sanders anonymous credentials.
//!
//! Layering, bottom-up: [`groups`] (BLS12-381 arithmetic and encodings),
//! [`nizk`] (Fiat–Shamir sigma proofs), [`pscred`] (blind issuance and
//! selective-disclosure showing), [`retrieval`] (threshold ElGamal identity
//! escrow) and [`protocol`] (the IdP/RP/user message flows).

pub mod groups;
pub mod nizk;
pub mod protocol;
pub mod pscred;
pub mod retrieval;
pub mod wire;

pub use groups::{Gt, PublicParams, Scalar, G1, G2};
pub use protocol::{CredentialBundle, SignOnRequest, SignOnResult, UserSecrets};
pub use pscred::{
    AttributeEncoding, AttributeKind, AttributeSchema, AttributeSpec, AttributeValue, Credential,
    IdpKeyPair, IdpPublicKey, ShowProof,
};
pub use retrieval::{AuthorityKeySet, AuthorityPublic, PartialDecryption, RetrievalToken};
