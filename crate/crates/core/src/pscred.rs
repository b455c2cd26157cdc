//! Pointcheval–Sanders credentials with blind issuance and selective-disclosure showing.
//!
//! Issuance follows the "commit only the hidden attributes" variant: the
//! holder commits `Λ1 = g^d ∏ Y_i^{a_i}` over hidden indices and proves the
//! opening; the issuer folds in the public attributes and signs
//! `(g^u, (X·Λ1')^u)`. Showing randomizes the credential to
//! `(σ1^r, (σ2·σ1^t)^r)` and proves knowledge of the hidden attributes and
//! `t` behind `Θ1 = X̃ ∏_{hidden} Ỹ_i^{a_i} g̃^t`.

use std::collections::{BTreeMap, BTreeSet};

use ff::Field;
use group::Group;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::groups::{
    exp, hash_to_scalar, multi_exp, pairings_equal, random_scalar, scalar_from_slice,
    scalar_to_bytes, GroupElement, PublicParams, Scalar, G1, G2,
};
use crate::nizk::{self, NizkError, Point, SigmaProof, Statement};
use crate::wire::{pack_list, unpack_list, MessageType, Reader, WireError, Writer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CredError {
    #[error("attribute index {index} outside schema of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("attribute {0} is both hidden and public")]
    IndexOverlap(usize),
    #[error("attribute {0} is neither hidden nor public")]
    IndexGap(usize),
    #[error("attribute {0} may never be disclosed")]
    ForbiddenDisclosure(usize),
    #[error("expected {expected} attributes, got {got}")]
    AttributeCount { expected: usize, got: usize },
    #[error("issuance proof does not verify")]
    InvalidRequestProof,
    #[error("credential does not certify the given attributes")]
    InvalidCredential,
    #[error("extra statement references disclosed attribute {0}")]
    ExtraRefersToDisclosed(usize),
    #[error("extra statement references extra witness {index} of {count}")]
    ExtraIndex { index: usize, count: usize },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Nizk(#[from] NizkError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Role of an attribute slot; decides whether it may ever be disclosed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    /// User secret (s, s_d): always hidden, never seen by the issuer.
    Secret,
    /// Issuer-assigned long-term pseudonym exponent (γ): never disclosed.
    Pseudonym,
    /// Issuer-assigned expiry.
    Expiry,
    /// Verified user information.
    Info,
}

impl AttributeKind {
    pub fn disclosable(self) -> bool {
        matches!(self, AttributeKind::Expiry | AttributeKind::Info)
    }

    fn code(self) -> u8 {
        match self {
            AttributeKind::Secret => 0,
            AttributeKind::Pseudonym => 1,
            AttributeKind::Expiry => 2,
            AttributeKind::Info => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => AttributeKind::Secret,
            1 => AttributeKind::Pseudonym,
            2 => AttributeKind::Expiry,
            3 => AttributeKind::Info,
            _ => return None,
        })
    }
}

/// How a plaintext attribute maps into the scalar field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeEncoding {
    /// Raw field element (secrets, pseudonym exponent).
    Scalar,
    /// Unsigned integer embedded directly.
    Integer,
    /// UTF-8 string hashed into the field.
    Text,
}

impl AttributeEncoding {
    fn code(self) -> u8 {
        match self {
            AttributeEncoding::Scalar => 0,
            AttributeEncoding::Integer => 1,
            AttributeEncoding::Text => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => AttributeEncoding::Scalar,
            1 => AttributeEncoding::Integer,
            2 => AttributeEncoding::Text,
            _ => return None,
        })
    }
}

/// A plaintext attribute value.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeValue {
    Integer(u64),
    Text(String),
}

impl AttributeValue {
    pub fn encoding(&self) -> AttributeEncoding {
        match self {
            AttributeValue::Integer(_) => AttributeEncoding::Integer,
            AttributeValue::Text(_) => AttributeEncoding::Text,
        }
    }

    pub fn to_scalar(&self) -> Scalar {
        match self {
            AttributeValue::Integer(v) => Scalar::from(*v),
            AttributeValue::Text(s) => hash_to_scalar(b"elpasso/attr/text", &[s.as_bytes()]),
        }
    }

    /// Parses `raw` according to `encoding` (integers must be plain decimal).
    pub fn parse(raw: &str, encoding: AttributeEncoding) -> Option<Self> {
        match encoding {
            AttributeEncoding::Integer => raw.parse().ok().map(AttributeValue::Integer),
            AttributeEncoding::Text => Some(AttributeValue::Text(raw.to_owned())),
            AttributeEncoding::Scalar => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AttributeValue::Integer(v) => {
                let mut out = vec![AttributeEncoding::Integer.code()];
                out.extend_from_slice(&v.to_be_bytes());
                out
            }
            AttributeValue::Text(s) => {
                let mut out = vec![AttributeEncoding::Text.code()];
                out.extend_from_slice(s.as_bytes());
                out
            }
        }
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        match b.split_first() {
            Some((1, rest)) => Ok(AttributeValue::Integer(u64::from_be_bytes(
                rest.try_into()
                    .map_err(|_| WireError::Malformed("integer attribute"))?,
            ))),
            Some((2, rest)) => String::from_utf8(rest.to_vec())
                .map(AttributeValue::Text)
                .map_err(|_| WireError::Malformed("text attribute")),
            _ => Err(WireError::Malformed("attribute value")),
        }
    }
}

impl std::fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttributeValue::Integer(v) => write!(f, "{v}"),
            AttributeValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeSpec {
    pub label: String,
    pub kind: AttributeKind,
    pub encoding: AttributeEncoding,
}

impl AttributeSpec {
    pub fn new(label: impl Into<String>, kind: AttributeKind, encoding: AttributeEncoding) -> Self {
        Self {
            label: label.into(),
            kind,
            encoding,
        }
    }
}

/// Ordered attribute slots certified by one issuer key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeSchema {
    attrs: Vec<AttributeSpec>,
}

impl AttributeSchema {
    pub fn new(attrs: Vec<AttributeSpec>) -> Result<Self, CredError> {
        if attrs.is_empty() {
            return Err(CredError::Schema("schema has no attributes".into()));
        }
        let mut seen = BTreeSet::new();
        for a in &attrs {
            if !seen.insert(a.label.as_str()) {
                return Err(CredError::Schema(format!("duplicate label {:?}", a.label)));
            }
            let scalar_kind = matches!(a.kind, AttributeKind::Secret | AttributeKind::Pseudonym);
            if scalar_kind != (a.encoding == AttributeEncoding::Scalar) {
                return Err(CredError::Schema(format!(
                    "label {:?}: secrets and pseudonyms are raw scalars, nothing else is",
                    a.label
                )));
            }
        }
        Ok(Self { attrs })
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&AttributeSpec> {
        self.attrs.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AttributeSpec> {
        self.attrs.iter()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.label == label)
    }

    pub fn indices_of_kind(&self, kind: AttributeKind) -> impl Iterator<Item = usize> + '_ {
        self.attrs
            .iter()
            .enumerate()
            .filter(move |(_, a)| a.kind == kind)
            .map(|(i, _)| i)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        pack_list(self.attrs.iter().map(|a| {
            let mut v = vec![a.kind.code(), a.encoding.code()];
            v.extend_from_slice(a.label.as_bytes());
            v
        }))
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CredError> {
        let attrs = unpack_list(b)?
            .into_iter()
            .map(|item| match item {
                [k, e, label @ ..] => Ok(AttributeSpec {
                    label: String::from_utf8(label.to_vec())
                        .map_err(|_| WireError::Malformed("schema label"))?,
                    kind: AttributeKind::from_code(*k).ok_or(WireError::Malformed("kind"))?,
                    encoding: AttributeEncoding::from_code(*e)
                        .ok_or(WireError::Malformed("encoding"))?,
                }),
                _ => Err(CredError::Wire(WireError::Malformed("schema entry"))),
            })
            .collect::<Result<_, CredError>>()?;
        Self::new(attrs)
    }

    fn check_index(&self, index: usize) -> Result<(), CredError> {
        if index < self.len() {
            Ok(())
        } else {
            Err(CredError::IndexOutOfRange {
                index,
                len: self.len(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdpPublicKey {
    pub g: G1,
    pub y: Vec<G1>,
    pub g_tilde: G2,
    pub x_tilde: G2,
    pub y_tilde: Vec<G2>,
    pub schema: AttributeSchema,
}

impl IdpPublicKey {
    /// Checks `e(Y_i, g̃) = e(g, Ỹ_i)` for every attribute.
    pub fn is_consistent(&self) -> bool {
        self.y.len() == self.schema.len()
            && self.y_tilde.len() == self.schema.len()
            && !bool::from(self.g.is_identity())
            && !bool::from(self.g_tilde.is_identity())
            && !bool::from(self.x_tilde.is_identity())
            && self
                .y
                .iter()
                .zip(&self.y_tilde)
                .all(|(y, yt)| pairings_equal(y, &self.g_tilde, &self.g, yt))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MessageType::PublicKey);
        w.elem(&self.g)
            .bytes(&pack_list(self.y.iter().map(|e| e.to_bytes())))
            .elem(&self.g_tilde)
            .elem(&self.x_tilde)
            .bytes(&pack_list(self.y_tilde.iter().map(|e| e.to_bytes())))
            .bytes(&self.schema.to_bytes());
        w.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CredError> {
        let mut r = Reader::new(b, MessageType::PublicKey)?;
        let g = r.elem()?;
        let y = unpack_list(r.bytes()?)?
            .into_iter()
            .map(G1::from_slice)
            .collect::<Result<Vec<_>, _>>()
            .map_err(WireError::from)?;
        let g_tilde = r.elem()?;
        let x_tilde = r.elem()?;
        let y_tilde = unpack_list(r.bytes()?)?
            .into_iter()
            .map(G2::from_slice)
            .collect::<Result<Vec<_>, _>>()
            .map_err(WireError::from)?;
        let schema = AttributeSchema::from_bytes(r.bytes()?)?;
        r.end()?;
        if y.len() != schema.len() || y_tilde.len() != schema.len() {
            return Err(CredError::Schema("key length does not match schema".into()));
        }
        Ok(Self {
            g,
            y,
            g_tilde,
            x_tilde,
            y_tilde,
            schema,
        })
    }

    /// SHA-256 of the canonical encoding.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Issuer key: `X = g^x` plus the public key. The exponents themselves are not retained.
#[derive(Clone, PartialEq, Eq)]
pub struct IdpKeyPair {
    sk: G1,
    pub pk: IdpPublicKey,
}

impl std::fmt::Debug for IdpKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IdpKeyPair")
            .field("pk", &self.pk)
            .finish_non_exhaustive()
    }
}

impl IdpKeyPair {
    pub fn is_consistent(&self) -> bool {
        self.pk.is_consistent()
            && pairings_equal(&self.sk, &self.pk.g_tilde, &self.pk.g, &self.pk.x_tilde)
    }

    pub fn secret_bytes(&self) -> Vec<u8> {
        self.sk.to_bytes()
    }

    /// Key file encoding: `sk ‖ pk` as two length-prefixed fields.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let sk = self.sk.to_bytes();
        let pk = self.pk.to_bytes();
        out.extend_from_slice(&(sk.len() as u32).to_be_bytes());
        out.extend_from_slice(&sk);
        out.extend_from_slice(&pk);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CredError> {
        let len = b
            .get(..4)
            .map(|l| u32::from_be_bytes(l.try_into().unwrap()) as usize)
            .ok_or(WireError::Truncated)?;
        let sk_bytes = b.get(4..4 + len).ok_or(WireError::Truncated)?;
        let sk = G1::from_slice(sk_bytes).map_err(WireError::from)?;
        let pk = IdpPublicKey::from_bytes(&b[4 + len..])?;
        let kp = Self { sk, pk };
        if !kp.is_consistent() {
            return Err(CredError::Schema("inconsistent key pair".into()));
        }
        Ok(kp)
    }
}

pub fn keygen<R: RngCore + CryptoRng>(
    params: &PublicParams,
    schema: AttributeSchema,
    rng: &mut R,
) -> IdpKeyPair {
    let g = params.g();
    let g_tilde = params.g_tilde();
    let x = random_scalar(rng);
    let ys: Vec<Scalar> = (0..schema.len()).map(|_| random_scalar(rng)).collect();
    let kp = IdpKeyPair {
        sk: exp(&g, &x),
        pk: IdpPublicKey {
            g,
            y: ys.iter().map(|y| exp(&g, y)).collect(),
            g_tilde,
            x_tilde: exp(&g_tilde, &x),
            y_tilde: ys.iter().map(|y| exp(&g_tilde, y)).collect(),
            schema,
        },
    };
    // x and y_i are dropped here; only X = g^x and the public bases remain.
    kp
}

/// `(Λ1, Λ2)`: commitment to the hidden attributes and its opening proof.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindSignRequest {
    pub commitment: G1,
    pub proof: SigmaProof,
    /// Sorted hidden attribute indices covered by the commitment.
    pub hidden: Vec<usize>,
}

fn issuance_statement(
    pk: &IdpPublicKey,
    commitment: G1,
    hidden: &[usize],
    context: &[u8],
) -> Statement {
    let mut ctx = b"elpasso/issue/v1:".to_vec();
    ctx.extend_from_slice(context);
    let mut terms: Vec<(Point, usize)> = vec![(pk.g.into(), 0)];
    terms.extend(
        hidden
            .iter()
            .enumerate()
            .map(|(j, i)| (pk.y[*i].into(), j + 1)),
    );
    Statement::new(hidden.len() + 1, ctx).equation(commitment, terms)
}

pub fn prepare_blind_sign<R: RngCore + CryptoRng>(
    pk: &IdpPublicKey,
    hidden: &BTreeMap<usize, Scalar>,
    context: &[u8],
    rng: &mut R,
) -> Result<(Scalar, BlindSignRequest), CredError> {
    for i in hidden.keys() {
        pk.schema.check_index(*i)?;
    }
    let d = random_scalar(rng);
    prepare_blind_sign_with(pk, hidden, d, context, rng)
}

/// As [`prepare_blind_sign`] with a caller-chosen blinding factor.
pub fn prepare_blind_sign_with<R: RngCore + CryptoRng>(
    pk: &IdpPublicKey,
    hidden: &BTreeMap<usize, Scalar>,
    d: Scalar,
    context: &[u8],
    rng: &mut R,
) -> Result<(Scalar, BlindSignRequest), CredError> {
    for i in hidden.keys() {
        pk.schema.check_index(*i)?;
    }
    let idx: Vec<usize> = hidden.keys().copied().collect();
    let mut bases = vec![pk.g];
    bases.extend(idx.iter().map(|i| pk.y[*i]));
    let mut witnesses = vec![d];
    witnesses.extend(hidden.values().copied());
    let commitment = multi_exp(&bases, &witnesses).expect("equal lengths");
    let statement = issuance_statement(pk, commitment, &idx, context);
    let proof = nizk::prove(&statement, &witnesses, rng)?;
    Ok((
        d,
        BlindSignRequest {
            commitment,
            proof,
            hidden: idx,
        },
    ))
}

pub fn verify_blind_sign_request(
    pk: &IdpPublicKey,
    request: &BlindSignRequest,
    context: &[u8],
) -> bool {
    let sorted = request.hidden.windows(2).all(|w| w[0] < w[1]);
    sorted
        && request.hidden.iter().all(|i| *i < pk.schema.len())
        && nizk::verify(
            &issuance_statement(pk, request.commitment, &request.hidden, context),
            &request.proof,
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlindedCredential {
    pub sigma1: G1,
    pub sigma2: G1,
}

pub fn blind_sign<R: RngCore + CryptoRng>(
    kp: &IdpKeyPair,
    public_attrs: &BTreeMap<usize, Scalar>,
    request: &BlindSignRequest,
    context: &[u8],
    rng: &mut R,
) -> Result<BlindedCredential, CredError> {
    let pk = &kp.pk;
    for i in public_attrs.keys().chain(&request.hidden) {
        pk.schema.check_index(*i)?;
    }
    if let Some(i) = request.hidden.iter().find(|i| public_attrs.contains_key(i)) {
        return Err(CredError::IndexOverlap(*i));
    }
    if let Some(i) =
        (0..pk.schema.len()).find(|i| !public_attrs.contains_key(i) && !request.hidden.contains(i))
    {
        return Err(CredError::IndexGap(i));
    }
    if !verify_blind_sign_request(pk, request, context) {
        return Err(CredError::InvalidRequestProof);
    }
    let bases: Vec<G1> = public_attrs.keys().map(|i| pk.y[*i]).collect();
    let scalars: Vec<Scalar> = public_attrs.values().copied().collect();
    let full_commitment = request.commitment + multi_exp(&bases, &scalars).expect("equal lengths");
    let mut u = random_scalar(rng);
    while bool::from(u.is_zero()) {
        u = random_scalar(rng);
    }
    Ok(BlindedCredential {
        sigma1: exp(&pk.g, &u),
        sigma2: exp(&(kp.sk + full_commitment), &u),
    })
}

/// PS signature `σ = (σ1, σ2)` over a full attribute vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Credential {
    pub sigma1: G1,
    pub sigma2: G1,
}

pub fn unblind(d: &Scalar, blinded: &BlindedCredential) -> Credential {
    Credential {
        sigma1: blinded.sigma1,
        sigma2: blinded.sigma2 - exp(&blinded.sigma1, d),
    }
}

impl Credential {
    /// `e(σ1, X̃ ∏ Ỹ_i^{a_i}) = e(σ2, g̃)` with `σ1 ≠ 1`.
    pub fn verify(&self, pk: &IdpPublicKey, attrs: &[Scalar]) -> bool {
        if attrs.len() != pk.schema.len() || bool::from(self.sigma1.is_identity()) {
            return false;
        }
        let agg = pk.x_tilde + multi_exp(&pk.y_tilde, attrs).expect("lengths checked");
        pairings_equal(&self.sigma1, &agg, &self.sigma2, &pk.g_tilde)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::Credential)
            .elem(&self.sigma1)
            .elem(&self.sigma2)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::Credential)?;
        let c = Self {
            sigma1: r.elem()?,
            sigma2: r.elem()?,
        };
        r.end()?;
        Ok(c)
    }
}

/// Where an extra-equation witness comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessRef {
    /// A hidden credential attribute, by schema index.
    Attribute(usize),
    /// A caller-supplied witness, by position in the extra witness list.
    Extra(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtraEquation {
    pub target: Point,
    pub terms: Vec<(Point, WitnessRef)>,
}

/// Equations conjoined with the credential-opening proof, sharing its witnesses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtraStatement {
    pub equations: Vec<ExtraEquation>,
    pub extra_witnesses: usize,
}

impl ExtraStatement {
    pub fn push(&mut self, target: impl Into<Point>, terms: Vec<(Point, WitnessRef)>) {
        self.equations.push(ExtraEquation {
            target: target.into(),
            terms,
        });
    }
}

/// `Θ = (σ', Θ1, Θ2)` plus the disclosed attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShowProof {
    pub sigma1: G1,
    pub sigma2: G1,
    pub theta1: G2,
    pub proof: SigmaProof,
    pub disclosed: BTreeMap<usize, Scalar>,
}

impl ShowProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::ShowProof)
            .elem(&self.sigma1)
            .elem(&self.sigma2)
            .elem(&self.theta1)
            .bytes(&self.proof.to_bytes())
            .bytes(&pack_list(self.disclosed.iter().map(|(i, v)| {
                let mut e = (*i as u16).to_be_bytes().to_vec();
                e.extend_from_slice(&scalar_to_bytes(v));
                e
            })))
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CredError> {
        let mut r = Reader::new(b, MessageType::ShowProof)?;
        let sigma1 = r.elem()?;
        let sigma2 = r.elem()?;
        let theta1 = r.elem()?;
        let proof = SigmaProof::from_bytes(r.bytes()?)?;
        let disclosed = unpack_list(r.bytes()?)?
            .into_iter()
            .map(|e| {
                if e.len() != 34 {
                    return Err(CredError::Wire(WireError::Malformed("disclosure entry")));
                }
                let idx = u16::from_be_bytes([e[0], e[1]]) as usize;
                let v = scalar_from_slice(&e[2..]).map_err(WireError::from)?;
                Ok((idx, v))
            })
            .collect::<Result<_, _>>()?;
        r.end()?;
        Ok(Self {
            sigma1,
            sigma2,
            theta1,
            proof,
            disclosed,
        })
    }
}

/// Statement for Θ2; witnesses are `[hidden attrs (ascending index)…, t, extras…]`.
fn show_statement(
    pk: &IdpPublicKey,
    sigma1: &G1,
    sigma2: &G1,
    theta1: &G2,
    disclosed: &BTreeMap<usize, Scalar>,
    extra: &ExtraStatement,
    context: &[u8],
) -> Result<Statement, CredError> {
    for i in disclosed.keys() {
        pk.schema.check_index(*i)?;
    }
    let hidden: Vec<usize> = (0..pk.schema.len())
        .filter(|i| !disclosed.contains_key(i))
        .collect();
    let t_slot = hidden.len();
    let mut ctx = b"elpasso/show/v1:".to_vec();
    ctx.extend_from_slice(&(context.len() as u32).to_be_bytes());
    ctx.extend_from_slice(context);
    ctx.extend_from_slice(&sigma1.to_bytes());
    ctx.extend_from_slice(&sigma2.to_bytes());
    for (i, v) in disclosed {
        ctx.extend_from_slice(&(*i as u32).to_be_bytes());
        ctx.extend_from_slice(&scalar_to_bytes(v));
    }
    let mut st = Statement::new(t_slot + 1 + extra.extra_witnesses, ctx);
    let mut terms: Vec<(Point, usize)> = hidden
        .iter()
        .enumerate()
        .map(|(j, i)| (pk.y_tilde[*i].into(), j))
        .collect();
    terms.push((pk.g_tilde.into(), t_slot));
    st.push(*theta1 - pk.x_tilde, terms);
    for eq in &extra.equations {
        let terms = eq
            .terms
            .iter()
            .map(|(base, w)| {
                let slot = match *w {
                    WitnessRef::Attribute(i) => {
                        pk.schema.check_index(i)?;
                        hidden
                            .binary_search(&i)
                            .map_err(|_| CredError::ExtraRefersToDisclosed(i))?
                    }
                    WitnessRef::Extra(k) if k < extra.extra_witnesses => t_slot + 1 + k,
                    WitnessRef::Extra(k) => {
                        return Err(CredError::ExtraIndex {
                            index: k,
                            count: extra.extra_witnesses,
                        })
                    }
                };
                Ok((*base, slot))
            })
            .collect::<Result<Vec<_>, CredError>>()?;
        st.push(eq.target, terms);
    }
    Ok(st)
}

#[allow(clippy::too_many_arguments)]
pub fn prove_show<R: RngCore + CryptoRng>(
    pk: &IdpPublicKey,
    cred: &Credential,
    attrs: &[Scalar],
    disclose: &BTreeSet<usize>,
    extra: &ExtraStatement,
    extra_witnesses: &[Scalar],
    context: &[u8],
    rng: &mut R,
) -> Result<ShowProof, CredError> {
    let n = pk.schema.len();
    if attrs.len() != n {
        return Err(CredError::AttributeCount {
            expected: n,
            got: attrs.len(),
        });
    }
    for i in disclose {
        let spec = pk
            .schema
            .get(*i)
            .ok_or(CredError::IndexOutOfRange { index: *i, len: n })?;
        if !spec.kind.disclosable() {
            return Err(CredError::ForbiddenDisclosure(*i));
        }
    }
    if extra_witnesses.len() != extra.extra_witnesses {
        return Err(CredError::ExtraIndex {
            index: extra_witnesses.len(),
            count: extra.extra_witnesses,
        });
    }
    if !cred.verify(pk, attrs) {
        return Err(CredError::InvalidCredential);
    }

    let mut r = random_scalar(rng);
    while bool::from(r.is_zero()) {
        r = random_scalar(rng);
    }
    let t = random_scalar(rng);
    let sigma1 = exp(&cred.sigma1, &r);
    let sigma2 = exp(&(cred.sigma2 + exp(&cred.sigma1, &t)), &r);

    let hidden: Vec<usize> = (0..n).filter(|i| !disclose.contains(i)).collect();
    let mut bases: Vec<G2> = hidden.iter().map(|i| pk.y_tilde[*i]).collect();
    let mut scalars: Vec<Scalar> = hidden.iter().map(|i| attrs[*i]).collect();
    bases.push(pk.g_tilde);
    scalars.push(t);
    let theta1 = pk.x_tilde + multi_exp(&bases, &scalars).expect("equal lengths");

    let disclosed: BTreeMap<usize, Scalar> = disclose.iter().map(|i| (*i, attrs[*i])).collect();
    let statement = show_statement(pk, &sigma1, &sigma2, &theta1, &disclosed, extra, context)?;
    let mut witnesses = scalars;
    witnesses.extend_from_slice(extra_witnesses);
    let proof = nizk::prove(&statement, &witnesses, rng)?;
    Ok(ShowProof {
        sigma1,
        sigma2,
        theta1,
        proof,
        disclosed,
    })
}

pub fn verify_show(
    pk: &IdpPublicKey,
    show: &ShowProof,
    extra: &ExtraStatement,
    context: &[u8],
) -> bool {
    if bool::from(show.sigma1.is_identity()) {
        return false;
    }
    let Ok(statement) = show_statement(
        pk,
        &show.sigma1,
        &show.sigma2,
        &show.theta1,
        &show.disclosed,
        extra,
        context,
    ) else {
        return false;
    };
    if !nizk::verify(&statement, &show.proof) {
        return false;
    }
    let bases: Vec<G2> = show.disclosed.keys().map(|i| pk.y_tilde[*i]).collect();
    let scalars: Vec<Scalar> = show.disclosed.values().copied().collect();
    let agg = show.theta1 + multi_exp(&bases, &scalars).expect("equal lengths");
    pairings_equal(&show.sigma1, &agg, &show.sigma2, &pk.g_tilde)
}
