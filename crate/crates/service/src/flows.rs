//! User-side protocol sequences over HTTP.

use elpasso_core::groups::PublicParams;
use elpasso_core::protocol::{
    prove_id, request_id, rotate_secret, unblind_id, CredentialBundle, Disclosure, ProtocolError,
    Purpose, RpSession, SignOnFlags, SignOnRequest, SignOnResult, UserSecrets,
};
use elpasso_core::IdpPublicKey;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::api::SignOnMeta;
use crate::client::{Client, ClientError};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Setup phase against an authenticated IdP client.
pub fn fetch_credential<R: RngCore + CryptoRng>(
    idp: &Client,
    pk: &IdpPublicKey,
    issuer: &str,
    secrets: &UserSecrets,
    info: &[String],
    two_fa: bool,
    rng: &mut R,
) -> Result<CredentialBundle, FlowError> {
    let (d, msg) = request_id(pk, secrets, info, two_fa, rng)?;
    let blinded = idp.request_id(&msg)?;
    Ok(unblind_id(pk, issuer, &d, secrets, &blinded)?)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SignOnOptions {
    pub guest: bool,
    pub two_fa: bool,
}

/// What the RP's metadata asks of a sign-on.
pub fn session_of(meta: &SignOnMeta) -> RpSession {
    RpSession {
        domain: meta.domain.clone(),
        nonce: meta.nonce.clone(),
        authority_key: meta.authority.as_ref().map(|a| a.y),
    }
}

/// Builds a sign-on request from fresh RP metadata without sending it.
#[allow(clippy::too_many_arguments)]
pub fn prepare_signon<R: RngCore + CryptoRng>(
    meta: &SignOnMeta,
    params: &PublicParams,
    pk: &IdpPublicKey,
    bundle: &CredentialBundle,
    secrets: &UserSecrets,
    disclose: &[Disclosure],
    opts: SignOnOptions,
    now: u64,
    rng: &mut R,
) -> Result<SignOnRequest, ProtocolError> {
    let flags = SignOnFlags {
        guest: opts.guest,
        retrieval: meta.authority.is_some(),
        two_fa: opts.two_fa || meta.policy.require_2fa,
        purpose: Purpose::SignOn,
    };
    prove_id(
        params,
        pk,
        bundle,
        secrets,
        &session_of(meta),
        disclose,
        flags,
        now,
        rng,
    )
}

/// Sign-on phase: metadata, proof, submission.
#[allow(clippy::too_many_arguments)]
pub fn sign_on<R: RngCore + CryptoRng>(
    rp: &Client,
    params: &PublicParams,
    pk: &IdpPublicKey,
    bundle: &CredentialBundle,
    secrets: &UserSecrets,
    disclose: &[Disclosure],
    opts: SignOnOptions,
    now: u64,
    rng: &mut R,
) -> Result<(SignOnRequest, SignOnResult), FlowError> {
    let meta = rp.signon_meta()?;
    let req = prepare_signon(&meta, params, pk, bundle, secrets, disclose, opts, now, rng)?;
    let result = rp.signon(&req)?;
    Ok((req, result))
}

/// Moves the RP account from the old secret to the new one.
#[allow(clippy::too_many_arguments)]
pub fn rotate<R: RngCore + CryptoRng>(
    rp: &Client,
    params: &PublicParams,
    pk: &IdpPublicKey,
    old: (&CredentialBundle, &UserSecrets),
    new: (&CredentialBundle, &UserSecrets),
    now: u64,
    rng: &mut R,
) -> Result<SignOnResult, FlowError> {
    let meta = rp.signon_meta()?;
    let req = rotate_secret(params, pk, old, new, &session_of(&meta), now, rng)?;
    Ok(rp.rotate(&req)?)
}
