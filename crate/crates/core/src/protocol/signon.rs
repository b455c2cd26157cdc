use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::setup::{pack_info, unpack_info, CredentialBundle, SsoLayout, UserSecrets};
use super::{day_of, ProtocolError, DEVICE_SECRET, EXPIRY, GAMMA, SECRET};
use crate::groups::{
    exp, hash_to_g1, random_scalar, retrieval_base, GroupElement, PublicParams, Scalar, G1, G2,
};
use crate::nizk::SigmaProof;
use crate::pscred::{
    self, AttributeKind, AttributeValue, ExtraStatement, IdpPublicKey, ShowProof, WitnessRef,
};
use crate::retrieval::{self, RetrievalToken};
use crate::wire::{
    hex_bytes, hex_elem, hex_opt_elem, hex_proof, MessageType, Reader, WireError, Writer,
};

/// `ζ = H(domain)^secret`.
pub fn derive_pseudonym(secret: &Scalar, domain: &str) -> G1 {
    exp(&domain_base(domain), secret)
}

fn domain_base(domain: &str) -> G1 {
    hash_to_g1(domain.as_bytes())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    #[default]
    SignOn,
    RotateOld,
    RotateNew,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignOnFlags {
    pub guest: bool,
    pub retrieval: bool,
    pub two_fa: bool,
    #[serde(default)]
    pub purpose: Purpose,
}

impl SignOnFlags {
    pub fn to_byte(self) -> u8 {
        let purpose = match self.purpose {
            Purpose::SignOn => 0,
            Purpose::RotateOld => 1,
            Purpose::RotateNew => 2,
        };
        (self.guest as u8) | (self.retrieval as u8) << 1 | (self.two_fa as u8) << 2 | purpose << 3
    }

    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        let purpose = match b >> 3 {
            0 => Purpose::SignOn,
            1 => Purpose::RotateOld,
            2 => Purpose::RotateNew,
            _ => return Err(WireError::Malformed("flags")),
        };
        Ok(Self {
            guest: b & 1 != 0,
            retrieval: b & 2 != 0,
            two_fa: b & 4 != 0,
            purpose,
        })
    }
}

/// What the client learned from the RP's sign-on metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpSession {
    pub domain: String,
    pub nonce: Vec<u8>,
    /// Aggregated authority key `y`, when the RP announces accountability.
    pub authority_key: Option<G1>,
}

/// Selective-disclosure request for one info attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disclosure {
    Reveal(String),
    /// Reveal, after checking locally that the value equals the given string.
    Equals(String, String),
}

impl Disclosure {
    /// Parses `label` or `label=value`; other predicates are rejected.
    pub fn parse(raw: &str) -> Result<Self, ProtocolError> {
        let raw = raw.trim();
        let is_label = |s: &str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        };
        match raw.split_once('=') {
            None if is_label(raw) => Ok(Self::Reveal(raw.to_string())),
            Some((l, v)) if is_label(l) && !v.starts_with('=') => {
                Ok(Self::Equals(l.to_string(), v.to_string()))
            }
            _ => Err(ProtocolError::UnsupportedPredicate(raw.to_string())),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Self::Reveal(l) | Self::Equals(l, _) => l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignOnRequest {
    pub issuer: String,
    pub domain: String,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    pub flags: SignOnFlags,
    pub tp: u64,
    pub disclosed: BTreeMap<String, AttributeValue>,
    #[serde(with = "hex_elem")]
    pub sigma1: G1,
    #[serde(with = "hex_elem")]
    pub sigma2: G1,
    #[serde(with = "hex_elem")]
    pub theta1: G2,
    #[serde(with = "hex_proof")]
    pub proof: SigmaProof,
    #[serde(with = "hex_opt_elem", default)]
    pub zeta: Option<G1>,
    #[serde(with = "hex_opt_elem", default)]
    pub zeta_device: Option<G1>,
    #[serde(default)]
    pub token: Option<RetrievalToken>,
}

impl SignOnRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MessageType::SignOnRequest);
        self.write_fields(&mut w);
        w.finish()
    }

    fn write_fields(&self, w: &mut Writer) {
        let token = self
            .token
            .map(|t| [t.c1.to_bytes(), t.c2.to_bytes()].concat());
        w.str(&self.issuer)
            .str(&self.domain)
            .bytes(&self.nonce)
            .u8(self.flags.to_byte())
            .u64(self.tp)
            .bytes(&pack_info(&self.disclosed))
            .elem(&self.sigma1)
            .elem(&self.sigma2)
            .elem(&self.theta1)
            .bytes(&self.proof.to_bytes())
            .opt(self.zeta.map(|z| z.to_bytes()).as_deref())
            .opt(self.zeta_device.map(|z| z.to_bytes()).as_deref())
            .opt(token.as_deref());
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(b, MessageType::SignOnRequest)?;
        let req = Self::read_fields(&mut r)?;
        r.end()?;
        Ok(req)
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, ProtocolError> {
        let issuer = r.string()?;
        let domain = r.string()?;
        let nonce = r.bytes()?.to_vec();
        let flags = SignOnFlags::from_byte(r.u8()?)?;
        let tp = r.u64()?;
        let disclosed = unpack_info(r.bytes()?)?;
        let sigma1 = r.elem()?;
        let sigma2 = r.elem()?;
        let theta1 = r.elem()?;
        let proof =
            SigmaProof::from_bytes(r.bytes()?).map_err(|_| WireError::Malformed("proof"))?;
        let zeta = r.opt_elem()?;
        let zeta_device = r.opt_elem()?;
        let token = match r.bytes()? {
            [] => None,
            t if t.len() == 2 * G1::ENCODED_LEN => Some(RetrievalToken {
                c1: G1::from_slice(&t[..G1::ENCODED_LEN]).map_err(WireError::from)?,
                c2: G1::from_slice(&t[G1::ENCODED_LEN..]).map_err(WireError::from)?,
            }),
            _ => return Err(WireError::Malformed("token").into()),
        };
        Ok(Self {
            issuer,
            domain,
            nonce,
            flags,
            tp,
            disclosed,
            sigma1,
            sigma2,
            theta1,
            proof,
            zeta,
            zeta_device,
            token,
        })
    }
}

/// Old and new showings presented together to move an account to a new secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationRequest {
    pub old: SignOnRequest,
    pub new: SignOnRequest,
}

impl RotationRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::RotationRequest)
            .bytes(&self.old.to_bytes())
            .bytes(&self.new.to_bytes())
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(b, MessageType::RotationRequest)?;
        let old = SignOnRequest::from_bytes(r.bytes()?)?;
        let new = SignOnRequest::from_bytes(r.bytes()?)?;
        r.end()?;
        Ok(Self { old, new })
    }
}

fn signon_context(req_issuer: &str, domain: &str, nonce: &[u8], flags: SignOnFlags) -> Vec<u8> {
    let mut ctx = b"elpasso/signon/v1:".to_vec();
    for part in [req_issuer.as_bytes(), domain.as_bytes(), nonce] {
        ctx.extend_from_slice(&(part.len() as u32).to_be_bytes());
        ctx.extend_from_slice(part);
    }
    ctx.push(flags.to_byte());
    ctx
}

fn extra_statement(
    params: &PublicParams,
    domain: &str,
    zeta: Option<&G1>,
    zeta_device: Option<&G1>,
    token: Option<(&RetrievalToken, &G1)>,
) -> ExtraStatement {
    let base = domain_base(domain);
    let mut extra = ExtraStatement::default();
    if let Some(z) = zeta {
        extra.push(*z, vec![(base.into(), WitnessRef::Attribute(SECRET))]);
    }
    if let Some(z) = zeta_device {
        extra.push(
            *z,
            vec![(base.into(), WitnessRef::Attribute(DEVICE_SECRET))],
        );
    }
    if let Some((t, y)) = token {
        extra.extra_witnesses = 1;
        extra.equations.extend(retrieval::token_equations(
            params,
            y,
            &retrieval_base(),
            t,
            WitnessRef::Extra(0),
            WitnessRef::Attribute(GAMMA),
        ));
    }
    extra
}

fn disclosed_scalars(
    pk: &IdpPublicKey,
    tp: u64,
    disclosed: &BTreeMap<String, AttributeValue>,
) -> Result<BTreeMap<usize, Scalar>, ProtocolError> {
    let mut out = BTreeMap::from([(EXPIRY, Scalar::from(tp))]);
    for (label, v) in disclosed {
        let i = pk
            .schema
            .index_of(label)
            .ok_or_else(|| ProtocolError::UnknownInfo(label.clone()))?;
        let spec = pk.schema.get(i).expect("index from schema");
        if spec.kind != AttributeKind::Info {
            return Err(ProtocolError::ForbiddenDisclosure(label.clone()));
        }
        if spec.encoding != v.encoding() {
            return Err(ProtocolError::Malformed("disclosed value encoding"));
        }
        out.insert(i, v.to_scalar());
    }
    Ok(out)
}

/// Builds a sign-on request: the credential showing plus `ζ`, optional `ζ_d` and `E`.
#[allow(clippy::too_many_arguments)]
pub fn prove_id<R: RngCore + CryptoRng>(
    params: &PublicParams,
    pk: &IdpPublicKey,
    bundle: &CredentialBundle,
    secrets: &UserSecrets,
    rp: &RpSession,
    disclose: &[Disclosure],
    flags: SignOnFlags,
    now: u64,
    rng: &mut R,
) -> Result<SignOnRequest, ProtocolError> {
    if flags.purpose != Purpose::RotateOld && bundle.is_expired(now) {
        return Err(ProtocolError::Expired(bundle.tp));
    }
    let layout = SsoLayout::of(&pk.schema)?;
    if flags.two_fa && !layout.device_slot {
        return Err(ProtocolError::TwoFactorUnsupported);
    }
    if flags.guest && flags.purpose != Purpose::SignOn {
        return Err(ProtocolError::Malformed("guest rotation"));
    }
    let mut disclosed = BTreeMap::new();
    for d in disclose {
        let label = d.label();
        let spec = pk
            .schema
            .index_of(label)
            .and_then(|i| pk.schema.get(i))
            .ok_or_else(|| ProtocolError::UnknownInfo(label.to_string()))?;
        if spec.kind != AttributeKind::Info {
            return Err(ProtocolError::ForbiddenDisclosure(label.to_string()));
        }
        let value = bundle
            .info
            .get(label)
            .ok_or_else(|| ProtocolError::AbsentInfo(label.to_string()))?;
        if let Disclosure::Equals(_, expected) = d {
            if AttributeValue::parse(expected, spec.encoding).as_ref() != Some(value) {
                return Err(ProtocolError::PredicateFalse(label.to_string()));
            }
        }
        disclosed.insert(label.to_string(), value.clone());
    }

    let attrs = bundle.attributes(pk, secrets)?;
    let zeta = (!flags.guest).then(|| derive_pseudonym(secrets.s(), &rp.domain));
    let zeta_device = flags
        .two_fa
        .then(|| derive_pseudonym(secrets.s_d(), &rp.domain));
    let (eps, token, y) = if flags.retrieval {
        let y = rp.authority_key.ok_or(ProtocolError::NoAuthorityKey)?;
        let eps = random_scalar(rng);
        let t = retrieval::encrypt_with(params, &y, &retrieval_base(), &bundle.gamma, &eps);
        (Some(eps), Some(t), Some(y))
    } else {
        (None, None, None)
    };
    let extra = extra_statement(
        params,
        &rp.domain,
        zeta.as_ref(),
        zeta_device.as_ref(),
        token.as_ref().zip(y.as_ref()),
    );
    let disclose_idx: BTreeSet<usize> = disclosed_scalars(pk, bundle.tp, &disclosed)?
        .into_keys()
        .collect();
    let ctx = signon_context(&bundle.issuer, &rp.domain, &rp.nonce, flags);
    let extra_witnesses: Vec<Scalar> = eps.into_iter().collect();
    let show = pscred::prove_show(
        pk,
        &bundle.credential(),
        &attrs,
        &disclose_idx,
        &extra,
        &extra_witnesses,
        &ctx,
        rng,
    )?;
    Ok(SignOnRequest {
        issuer: bundle.issuer.clone(),
        domain: rp.domain.clone(),
        nonce: rp.nonce.clone(),
        flags,
        tp: bundle.tp,
        disclosed,
        sigma1: show.sigma1,
        sigma2: show.sigma2,
        theta1: show.theta1,
        proof: show.proof,
        zeta,
        zeta_device,
        token,
    })
}

/// Builds the old/new pair for moving an account from `s` to `s′`.
#[allow(clippy::too_many_arguments)]
pub fn rotate_secret<R: RngCore + CryptoRng>(
    params: &PublicParams,
    pk: &IdpPublicKey,
    old: (&CredentialBundle, &UserSecrets),
    new: (&CredentialBundle, &UserSecrets),
    rp: &RpSession,
    now: u64,
    rng: &mut R,
) -> Result<RotationRequest, ProtocolError> {
    let flags = |purpose, retrieval| SignOnFlags {
        retrieval,
        purpose,
        ..SignOnFlags::default()
    };
    let old_req = prove_id(
        params,
        pk,
        old.0,
        old.1,
        rp,
        &[],
        flags(Purpose::RotateOld, false),
        now,
        rng,
    )?;
    let new_req = prove_id(
        params,
        pk,
        new.0,
        new.1,
        rp,
        &[],
        flags(Purpose::RotateNew, rp.authority_key.is_some()),
        now,
        rng,
    )?;
    Ok(RotationRequest {
        old: old_req,
        new: new_req,
    })
}

/// Why an RP turned a request down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadProof,
    Expired,
    NotExpired,
    Replay,
    PolicyUnmet,
    UnknownIdp,
    Blocklisted,
    UnknownAccount,
    AccountExists,
    SecondFactorRequired,
    Malformed,
}

impl RejectReason {
    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(c: u8) -> Option<Self> {
        use RejectReason::*;
        [
            BadProof,
            Expired,
            NotExpired,
            Replay,
            PolicyUnmet,
            UnknownIdp,
            Blocklisted,
            UnknownAccount,
            AccountExists,
            SecondFactorRequired,
            Malformed,
        ]
        .get((c as usize).checked_sub(1)?)
        .copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BadProof => "bad-proof",
            Self::Expired => "expired",
            Self::NotExpired => "not-expired",
            Self::Replay => "replay",
            Self::PolicyUnmet => "policy-unmet",
            Self::UnknownIdp => "unknown-idp",
            Self::Blocklisted => "blocklisted",
            Self::UnknownAccount => "unknown-account",
            Self::AccountExists => "account-exists",
            Self::SecondFactorRequired => "second-factor-required",
            Self::Malformed => "malformed",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpiryRule {
    MustBeValid,
    MustBeExpired,
}

/// The cryptographically checked content of a sign-on request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedSignOn {
    pub zeta: Option<G1>,
    pub zeta_device: Option<G1>,
    pub token: Option<RetrievalToken>,
    pub disclosed: BTreeMap<String, AttributeValue>,
    pub tp: u64,
    pub flags: SignOnFlags,
}

/// Structural, expiry and proof checks. Does not touch nonce or account state.
pub fn verify_signon(
    params: &PublicParams,
    pk: &IdpPublicKey,
    req: &SignOnRequest,
    domain: &str,
    authority_key: Option<&G1>,
    now: u64,
    expiry: ExpiryRule,
) -> Result<VerifiedSignOn, RejectReason> {
    if req.domain != domain {
        return Err(RejectReason::BadProof);
    }
    let layout = SsoLayout::of(&pk.schema).map_err(|_| RejectReason::UnknownIdp)?;
    let f = req.flags;
    if f.guest == req.zeta.is_some()
        || f.retrieval != req.token.is_some()
        || f.two_fa != req.zeta_device.is_some()
        || (f.two_fa && !layout.device_slot)
    {
        return Err(RejectReason::Malformed);
    }
    let y = match (&req.token, authority_key) {
        (Some(_), None) => return Err(RejectReason::PolicyUnmet),
        (_, y) => y,
    };
    let disclosed =
        disclosed_scalars(pk, req.tp, &req.disclosed).map_err(|_| RejectReason::Malformed)?;
    let expired = day_of(now) > req.tp;
    match expiry {
        ExpiryRule::MustBeValid if expired => return Err(RejectReason::Expired),
        ExpiryRule::MustBeExpired if !expired => return Err(RejectReason::NotExpired),
        _ => {}
    }
    let extra = extra_statement(
        params,
        domain,
        req.zeta.as_ref(),
        req.zeta_device.as_ref(),
        req.token.as_ref().zip(y),
    );
    let show = ShowProof {
        sigma1: req.sigma1,
        sigma2: req.sigma2,
        theta1: req.theta1,
        proof: req.proof.clone(),
        disclosed,
    };
    let ctx = signon_context(&req.issuer, domain, &req.nonce, f);
    if !pscred::verify_show(pk, &show, &extra, &ctx) {
        return Err(RejectReason::BadProof);
    }
    Ok(VerifiedSignOn {
        zeta: req.zeta,
        zeta_device: req.zeta_device,
        token: req.token,
        disclosed: req.disclosed.clone(),
        tp: req.tp,
        flags: f,
    })
}
