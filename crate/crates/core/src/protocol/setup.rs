use std::collections::BTreeMap;
use std::fmt;

use ff::Field;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{day_of, ProtocolError};
use crate::groups::{
    exp, random_scalar, retrieval_base, scalar_from_slice, scalar_to_bytes, Scalar, G1,
};
use crate::nizk::SigmaProof;
use crate::pscred::{
    self, AttributeEncoding, AttributeKind, AttributeSchema, AttributeSpec, AttributeValue,
    BlindSignRequest, BlindedCredential, CredError, Credential, IdpKeyPair, IdpPublicKey,
};
use crate::wire::{
    hex_elem, hex_proof, hex_scalar, pack_list, unpack_list, MessageType, Reader, WireError, Writer,
};

pub const SECRET: usize = 0;
pub const GAMMA: usize = 1;
pub const EXPIRY: usize = 2;
/// Present only in 2FA-capable schemas.
pub const DEVICE_SECRET: usize = 3;

/// Builds the sign-on schema `(s, gamma, tp[, s_d], info...)`.
pub fn sso_schema(
    info: &[(&str, AttributeEncoding)],
    device_slot: bool,
) -> Result<AttributeSchema, ProtocolError> {
    let mut attrs = vec![
        AttributeSpec::new("s", AttributeKind::Secret, AttributeEncoding::Scalar),
        AttributeSpec::new("gamma", AttributeKind::Pseudonym, AttributeEncoding::Scalar),
        AttributeSpec::new("tp", AttributeKind::Expiry, AttributeEncoding::Integer),
    ];
    if device_slot {
        attrs.push(AttributeSpec::new(
            "s_d",
            AttributeKind::Secret,
            AttributeEncoding::Scalar,
        ));
    }
    for (label, enc) in info {
        if *enc == AttributeEncoding::Scalar {
            return Err(ProtocolError::Schema(
                "info attributes must be integer or text",
            ));
        }
        attrs.push(AttributeSpec::new(*label, AttributeKind::Info, *enc));
    }
    Ok(AttributeSchema::new(attrs)?)
}

/// Where things live in a validated sign-on schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsoLayout {
    pub device_slot: bool,
    pub info: Vec<usize>,
}

impl SsoLayout {
    pub fn of(schema: &AttributeSchema) -> Result<Self, ProtocolError> {
        let kind = |i: usize| schema.get(i).map(|a| a.kind);
        if kind(SECRET) != Some(AttributeKind::Secret)
            || kind(GAMMA) != Some(AttributeKind::Pseudonym)
            || kind(EXPIRY) != Some(AttributeKind::Expiry)
            || schema.get(EXPIRY).map(|a| a.encoding) != Some(AttributeEncoding::Integer)
        {
            return Err(ProtocolError::Schema("expected (s, gamma, tp) prefix"));
        }
        let device_slot = kind(DEVICE_SECRET) == Some(AttributeKind::Secret);
        let first_info = if device_slot { 4 } else { 3 };
        let info: Vec<usize> = (first_info..schema.len()).collect();
        if info.iter().any(|i| kind(*i) != Some(AttributeKind::Info)) {
            return Err(ProtocolError::Schema(
                "only info attributes may follow the fixed prefix",
            ));
        }
        Ok(Self { device_slot, info })
    }

    pub fn hidden(&self) -> Vec<usize> {
        if self.device_slot {
            vec![SECRET, DEVICE_SECRET]
        } else {
            vec![SECRET]
        }
    }
}

/// The user's global secret `s` and this device's `s_d`.
#[derive(Clone, PartialEq, Eq)]
pub struct UserSecrets {
    s: Scalar,
    s_d: Scalar,
}

impl fmt::Debug for UserSecrets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("UserSecrets { .. }")
    }
}

impl UserSecrets {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self {
            s: random_scalar(rng),
            s_d: random_scalar(rng),
        }
    }

    /// Secrets for an additional device that learned `s` through enrollment.
    pub fn for_new_device<R: RngCore + CryptoRng>(s: Scalar, rng: &mut R) -> Self {
        Self {
            s,
            s_d: random_scalar(rng),
        }
    }

    pub fn s(&self) -> &Scalar {
        &self.s
    }

    pub fn s_d(&self) -> &Scalar {
        &self.s_d
    }

    /// Raw 64-byte form, for writing into an encrypted keystore only.
    pub fn to_secret_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&scalar_to_bytes(&self.s));
        out[32..].copy_from_slice(&scalar_to_bytes(&self.s_d));
        out
    }

    pub fn from_secret_bytes(b: &[u8]) -> Result<Self, ProtocolError> {
        if b.len() != 64 {
            return Err(ProtocolError::Malformed("secret length"));
        }
        let s = scalar_from_slice(&b[..32]).map_err(WireError::from)?;
        let s_d = scalar_from_slice(&b[32..]).map_err(WireError::from)?;
        Ok(Self { s, s_d })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub revoked: bool,
}

/// IdP-side user record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub login: String,
    #[serde(with = "hex_scalar")]
    pub gamma: Scalar,
    #[serde(with = "hex_elem")]
    pub h_gamma: G1,
    pub info: BTreeMap<String, AttributeValue>,
    pub devices: BTreeMap<String, DeviceEntry>,
}

impl UserRecord {
    pub fn new<R: RngCore + CryptoRng>(
        login: impl Into<String>,
        info: BTreeMap<String, AttributeValue>,
        rng: &mut R,
    ) -> Self {
        let gamma = random_scalar(rng);
        Self {
            login: login.into(),
            gamma,
            h_gamma: exp(&retrieval_base(), &gamma),
            info,
            devices: BTreeMap::new(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.h_gamma == exp(&retrieval_base(), &self.gamma)
    }
}

/// `RequestID` output: commitment to the hidden secrets plus requested info labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestIdMsg {
    #[serde(with = "hex_elem")]
    pub commitment: G1,
    #[serde(with = "hex_proof")]
    pub proof: SigmaProof,
    pub hidden: Vec<usize>,
    pub info: Vec<String>,
    pub two_fa: bool,
}

impl RequestIdMsg {
    fn blind_request(&self) -> BlindSignRequest {
        BlindSignRequest {
            commitment: self.commitment,
            proof: self.proof.clone(),
            hidden: self.hidden.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::RequestId)
            .elem(&self.commitment)
            .bytes(&self.proof.to_bytes())
            .bytes(&pack_list(
                self.hidden.iter().map(|i| (*i as u16).to_be_bytes()),
            ))
            .bytes(&pack_list(&self.info))
            .u8(self.two_fa as u8)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(b, MessageType::RequestId)?;
        let commitment = r.elem()?;
        let proof =
            SigmaProof::from_bytes(r.bytes()?).map_err(|_| WireError::Malformed("proof"))?;
        let hidden = unpack_list(r.bytes()?)?
            .into_iter()
            .map(|e| match e {
                [a, b] => Ok(u16::from_be_bytes([*a, *b]) as usize),
                _ => Err(WireError::Malformed("hidden index")),
            })
            .collect::<Result<_, _>>()?;
        let info = unpack_list(r.bytes()?)?
            .into_iter()
            .map(|e| String::from_utf8(e.to_vec()).map_err(|_| WireError::Malformed("label")))
            .collect::<Result<_, _>>()?;
        let two_fa = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(WireError::Malformed("flag").into()),
        };
        r.end()?;
        Ok(Self {
            commitment,
            proof,
            hidden,
            info,
            two_fa,
        })
    }
}

fn request_context(info: &[String], two_fa: bool) -> Vec<u8> {
    let mut ctx = b"elpasso/request-id/v1:".to_vec();
    ctx.extend_from_slice(&pack_list(info));
    ctx.push(two_fa as u8);
    ctx
}

/// Blinds the user's secrets for issuance. Returns the blinding factor `d`.
pub fn request_id<R: RngCore + CryptoRng>(
    pk: &IdpPublicKey,
    secrets: &UserSecrets,
    info_request: &[String],
    two_fa: bool,
    rng: &mut R,
) -> Result<(Scalar, RequestIdMsg), ProtocolError> {
    let layout = SsoLayout::of(&pk.schema)?;
    if two_fa && !layout.device_slot {
        return Err(ProtocolError::TwoFactorUnsupported);
    }
    for label in info_request {
        match pk.schema.index_of(label) {
            Some(i) if layout.info.contains(&i) => {}
            _ => return Err(ProtocolError::UnknownInfo(label.clone())),
        }
    }
    let mut hidden = BTreeMap::from([(SECRET, secrets.s)]);
    if layout.device_slot {
        hidden.insert(DEVICE_SECRET, secrets.s_d);
    }
    let ctx = request_context(info_request, two_fa);
    let (d, req) = pscred::prepare_blind_sign(pk, &hidden, &ctx, rng)?;
    Ok((
        d,
        RequestIdMsg {
            commitment: req.commitment,
            proof: req.proof,
            hidden: req.hidden,
            info: info_request.to_vec(),
            two_fa,
        },
    ))
}

/// Credential validity denomination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuancePolicy {
    pub validity_days: u64,
}

impl Default for IssuancePolicy {
    fn default() -> Self {
        Self { validity_days: 7 }
    }
}

impl IssuancePolicy {
    /// Last valid day for a credential issued at `now`; any time within a day maps to the same value.
    pub fn expiry_day(&self, now: u64) -> u64 {
        day_of(now) + self.validity_days
    }
}

/// `ProvideID` output. Carries `γ` back to its owner, who needs it as a witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedCredentialMsg {
    #[serde(with = "hex_elem")]
    pub sigma1: G1,
    #[serde(with = "hex_elem")]
    pub sigma2: G1,
    #[serde(with = "hex_scalar")]
    pub gamma: Scalar,
    pub tp: u64,
    pub info: BTreeMap<String, AttributeValue>,
}

impl BlindedCredentialMsg {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::BlindedCredential)
            .elem(&self.sigma1)
            .elem(&self.sigma2)
            .scalar(&self.gamma)
            .u64(self.tp)
            .bytes(&pack_info(&self.info))
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(b, MessageType::BlindedCredential)?;
        let m = Self {
            sigma1: r.elem()?,
            sigma2: r.elem()?,
            gamma: r.scalar()?,
            tp: r.u64()?,
            info: unpack_info(r.bytes()?)?,
        };
        r.end()?;
        Ok(m)
    }
}

pub(super) fn pack_info(info: &BTreeMap<String, AttributeValue>) -> Vec<u8> {
    pack_list(
        info.iter()
            .map(|(k, v)| pack_list([k.as_bytes().to_vec(), v.to_bytes()])),
    )
}

pub(super) fn unpack_info(body: &[u8]) -> Result<BTreeMap<String, AttributeValue>, WireError> {
    let mut out = BTreeMap::new();
    for item in unpack_list(body)? {
        let parts = unpack_list(item)?;
        let [label, value] = parts.as_slice() else {
            return Err(WireError::Malformed("info entry"));
        };
        let label = String::from_utf8(label.to_vec()).map_err(|_| WireError::Malformed("label"))?;
        if out
            .insert(label, AttributeValue::from_bytes(value)?)
            .is_some()
        {
            return Err(WireError::Malformed("duplicate info label"));
        }
    }
    Ok(out)
}

/// IdP side of issuance: checks the request against the user record and blind-signs.
pub fn provide_id<R: RngCore + CryptoRng>(
    kp: &IdpKeyPair,
    user: &UserRecord,
    device_id: &str,
    msg: &RequestIdMsg,
    now: u64,
    policy: &IssuancePolicy,
    rng: &mut R,
) -> Result<BlindedCredentialMsg, ProtocolError> {
    let schema = &kp.pk.schema;
    let layout = SsoLayout::of(schema)?;
    match user.devices.get(device_id) {
        None => return Err(ProtocolError::UnknownDevice(device_id.to_string())),
        Some(d) if d.revoked => return Err(ProtocolError::RevokedDevice(device_id.to_string())),
        Some(_) => {}
    }
    if msg.two_fa && !layout.device_slot {
        return Err(ProtocolError::TwoFactorUnsupported);
    }
    if msg.hidden != layout.hidden() {
        return Err(ProtocolError::Malformed("hidden attribute set"));
    }
    let mut info = BTreeMap::new();
    for label in &msg.info {
        let idx = schema
            .index_of(label)
            .filter(|i| layout.info.contains(i))
            .ok_or_else(|| ProtocolError::UnknownInfo(label.clone()))?;
        let value = user
            .info
            .get(label)
            .filter(|v| Some(v.encoding()) == schema.get(idx).map(|a| a.encoding))
            .ok_or_else(|| ProtocolError::UnverifiedInfo(label.clone()))?;
        info.insert(label.clone(), value.clone());
    }
    let tp = policy.expiry_day(now);
    let mut public = BTreeMap::from([(GAMMA, user.gamma), (EXPIRY, Scalar::from(tp))]);
    for i in &layout.info {
        let label = &schema.get(*i).expect("layout index").label;
        public.insert(
            *i,
            info.get(label)
                .map_or(Scalar::ZERO, AttributeValue::to_scalar),
        );
    }
    let ctx = request_context(&msg.info, msg.two_fa);
    let blinded =
        pscred::blind_sign(kp, &public, &msg.blind_request(), &ctx, rng).map_err(|e| match e {
            CredError::InvalidRequestProof => ProtocolError::BadProof,
            e => e.into(),
        })?;
    Ok(BlindedCredentialMsg {
        sigma1: blinded.sigma1,
        sigma2: blinded.sigma2,
        gamma: user.gamma,
        tp,
        info,
    })
}

/// A credential as held by its owner. Contains no user secret; those live in [`UserSecrets`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialBundle {
    pub issuer: String,
    #[serde(with = "hex_elem")]
    pub sigma1: G1,
    #[serde(with = "hex_elem")]
    pub sigma2: G1,
    #[serde(with = "hex_scalar")]
    pub gamma: Scalar,
    pub tp: u64,
    pub info: BTreeMap<String, AttributeValue>,
}

impl CredentialBundle {
    pub fn credential(&self) -> Credential {
        Credential {
            sigma1: self.sigma1,
            sigma2: self.sigma2,
        }
    }

    pub fn is_expired(&self, now: u64) -> bool {
        day_of(now) > self.tp
    }

    /// Full attribute vector in schema order; absent info slots are zero.
    pub fn attributes(
        &self,
        pk: &IdpPublicKey,
        secrets: &UserSecrets,
    ) -> Result<Vec<Scalar>, ProtocolError> {
        let layout = SsoLayout::of(&pk.schema)?;
        let mut attrs = vec![Scalar::ZERO; pk.schema.len()];
        attrs[SECRET] = secrets.s;
        attrs[GAMMA] = self.gamma;
        attrs[EXPIRY] = Scalar::from(self.tp);
        if layout.device_slot {
            attrs[DEVICE_SECRET] = secrets.s_d;
        }
        for (label, v) in &self.info {
            let i = pk
                .schema
                .index_of(label)
                .ok_or_else(|| ProtocolError::UnknownInfo(label.clone()))?;
            attrs[i] = v.to_scalar();
        }
        Ok(attrs)
    }
}

/// Removes the blinding and checks the result before accepting it.
pub fn unblind_id(
    pk: &IdpPublicKey,
    issuer: &str,
    d: &Scalar,
    secrets: &UserSecrets,
    msg: &BlindedCredentialMsg,
) -> Result<CredentialBundle, ProtocolError> {
    let cred = pscred::unblind(
        d,
        &BlindedCredential {
            sigma1: msg.sigma1,
            sigma2: msg.sigma2,
        },
    );
    let bundle = CredentialBundle {
        issuer: issuer.to_string(),
        sigma1: cred.sigma1,
        sigma2: cred.sigma2,
        gamma: msg.gamma,
        tp: msg.tp,
        info: msg.info.clone(),
    };
    let attrs = bundle.attributes(pk, secrets)?;
    if !cred.verify(pk, &attrs) {
        return Err(ProtocolError::InvalidCredential);
    }
    Ok(bundle)
}
