//! Threshold ElGamal identity-retrieval tokens.
//!
//! A user encrypts `h^γ` under the authorities' aggregated key `y` as
//! `E = (g^ε, y^ε h^γ)`. The master decryption scalar is Shamir-shared by a
//! trusted dealer; any `t` authorities recover `h^γ` by combining
//! `c1^{share_i}` with Lagrange coefficients at zero. Every partial carries
//! a Chaum–Pedersen proof against the authority's public share commitment.

use ff::Field;
use group::Group;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groups::{exp, random_scalar, PublicParams, Scalar, G1};
use crate::nizk::{self, Point, SigmaProof, Statement};
use crate::pscred::{ExtraEquation, WitnessRef};
use crate::wire::{
    hex_elem, hex_elems, hex_proof, hex_scalar, MessageType, Reader, WireError, Writer,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("invalid threshold {threshold} of {authorities}")]
    InvalidThreshold {
        threshold: usize,
        authorities: usize,
    },
    #[error("need {needed} partial decryptions, got {got}")]
    BelowThreshold { needed: usize, got: usize },
    #[error("duplicate partial decryption from authority {0}")]
    DuplicateIndex(u32),
    #[error("authority {0} is not part of this key set")]
    UnknownAuthority(u32),
    #[error("partial decryption from authority {0} failed verification")]
    InvalidPartial(u32),
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityShare {
    /// Evaluation point, 1-based; 0 is the secret itself.
    pub index: u32,
    #[serde(with = "hex_scalar")]
    secret: Scalar,
}

impl std::fmt::Debug for AuthorityShare {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuthorityShare")
            .field("index", &self.index)
            .finish_non_exhaustive()
    }
}

/// What RPs and combiners need: threshold, `y = g^{master}` and per-share commitments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityPublic {
    pub threshold: usize,
    #[serde(with = "hex_elem")]
    pub y: G1,
    #[serde(with = "hex_elems")]
    pub commitments: Vec<G1>,
}

impl AuthorityPublic {
    pub fn authorities(&self) -> usize {
        self.commitments.len()
    }

    pub fn commitment(&self, index: u32) -> Option<&G1> {
        (index as usize)
            .checked_sub(1)
            .and_then(|i| self.commitments.get(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorityKeySet {
    pub public: AuthorityPublic,
    pub shares: Vec<AuthorityShare>,
}

pub fn authority_keygen<R: RngCore + CryptoRng>(
    params: &PublicParams,
    authorities: usize,
    threshold: usize,
    rng: &mut R,
) -> Result<AuthorityKeySet, RetrievalError> {
    if threshold == 0 || threshold > authorities || authorities > u32::MAX as usize {
        return Err(RetrievalError::InvalidThreshold {
            threshold,
            authorities,
        });
    }
    // f(X) = master + c1 X + … + c_{t-1} X^{t-1}
    let coeffs: Vec<Scalar> = (0..threshold).map(|_| random_scalar(rng)).collect();
    let eval = |x: u64| {
        let x = Scalar::from(x);
        coeffs.iter().rev().fold(Scalar::ZERO, |acc, c| acc * x + c)
    };
    let g = params.g();
    let shares: Vec<AuthorityShare> = (1..=authorities as u32)
        .map(|i| AuthorityShare {
            index: i,
            secret: eval(i as u64),
        })
        .collect();
    Ok(AuthorityKeySet {
        public: AuthorityPublic {
            threshold,
            y: exp(&g, &coeffs[0]),
            commitments: shares.iter().map(|s| exp(&g, &s.secret)).collect(),
        },
        shares,
    })
}

/// `E = (c1, c2) = (g^ε, y^ε h^γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalToken {
    #[serde(with = "hex_elem")]
    pub c1: G1,
    #[serde(with = "hex_elem")]
    pub c2: G1,
}

impl RetrievalToken {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::RetrievalToken)
            .elem(&self.c1)
            .elem(&self.c2)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::RetrievalToken)?;
        let t = Self {
            c1: r.elem()?,
            c2: r.elem()?,
        };
        r.end()?;
        Ok(t)
    }
}

pub fn encrypt<R: RngCore + CryptoRng>(
    params: &PublicParams,
    y: &G1,
    h: &G1,
    gamma: &Scalar,
    rng: &mut R,
) -> (Scalar, RetrievalToken) {
    let eps = random_scalar(rng);
    (eps, encrypt_with(params, y, h, gamma, &eps))
}

pub fn encrypt_with(
    params: &PublicParams,
    y: &G1,
    h: &G1,
    gamma: &Scalar,
    eps: &Scalar,
) -> RetrievalToken {
    RetrievalToken {
        c1: exp(&params.g(), eps),
        c2: exp(y, eps) + exp(h, gamma),
    }
}

/// The two equations proving `E` well-formed, for conjunction with a credential show.
pub fn token_equations(
    params: &PublicParams,
    y: &G1,
    h: &G1,
    token: &RetrievalToken,
    eps: WitnessRef,
    gamma: WitnessRef,
) -> [ExtraEquation; 2] {
    [
        ExtraEquation {
            target: token.c1.into(),
            terms: vec![(params.g().into(), eps)],
        },
        ExtraEquation {
            target: token.c2.into(),
            terms: vec![((*y).into(), eps), ((*h).into(), gamma)],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialDecryption {
    pub index: u32,
    /// `c1^{share_i}`.
    #[serde(with = "hex_elem")]
    pub share: G1,
    #[serde(with = "hex_proof")]
    pub proof: SigmaProof,
}

impl PartialDecryption {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::PartialDecryption)
            .bytes(&self.index.to_be_bytes())
            .elem(&self.share)
            .bytes(&self.proof.to_bytes())
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::PartialDecryption)?;
        let index = u32::from_be_bytes(
            r.bytes()?
                .try_into()
                .map_err(|_| WireError::Malformed("authority index"))?,
        );
        let share = r.elem()?;
        let proof =
            SigmaProof::from_bytes(r.bytes()?).map_err(|_| WireError::Malformed("proof"))?;
        r.end()?;
        Ok(Self {
            index,
            share,
            proof,
        })
    }
}

fn partial_statement(
    params: &PublicParams,
    commitment: &G1,
    token: &RetrievalToken,
    partial: &G1,
    index: u32,
) -> Statement {
    let mut ctx = b"elpasso/partial-decrypt/v1:".to_vec();
    ctx.extend_from_slice(&index.to_be_bytes());
    ctx.extend_from_slice(&token.to_bytes());
    Statement::new(1, ctx)
        .equation(*partial, [(Point::G1(token.c1), 0)])
        .equation(*commitment, [(Point::G1(params.g()), 0)])
}

pub fn partial_decrypt<R: RngCore + CryptoRng>(
    params: &PublicParams,
    share: &AuthorityShare,
    token: &RetrievalToken,
    rng: &mut R,
) -> PartialDecryption {
    let d = exp(&token.c1, &share.secret);
    let commitment = exp(&params.g(), &share.secret);
    let st = partial_statement(params, &commitment, token, &d, share.index);
    let proof =
        nizk::prove(&st, &[share.secret], rng).expect("honest share satisfies its statement");
    PartialDecryption {
        index: share.index,
        share: d,
        proof,
    }
}

pub fn verify_partial(
    params: &PublicParams,
    public: &AuthorityPublic,
    token: &RetrievalToken,
    partial: &PartialDecryption,
) -> bool {
    match public.commitment(partial.index) {
        Some(c) => nizk::verify(
            &partial_statement(params, c, token, &partial.share, partial.index),
            &partial.proof,
        ),
        None => false,
    }
}

/// Lagrange coefficient at zero for `index` over the evaluation set `indices`.
pub fn lagrange_at_zero(index: u32, indices: &[u32]) -> Scalar {
    let xi = Scalar::from(index as u64);
    let (num, den) = indices.iter().filter(|j| **j != index).fold(
        (Scalar::ONE, Scalar::ONE),
        |(num, den), j| {
            let xj = Scalar::from(*j as u64);
            (num * xj, den * (xj - xi))
        },
    );
    num * den.invert().expect("distinct non-zero indices")
}

/// Recovers `h^γ = c2 / c1^{master}` from at least `t` verified partials.
pub fn combine(
    params: &PublicParams,
    public: &AuthorityPublic,
    token: &RetrievalToken,
    partials: &[PartialDecryption],
) -> Result<G1, RetrievalError> {
    let mut seen = std::collections::BTreeSet::new();
    for p in partials {
        if public.commitment(p.index).is_none() {
            return Err(RetrievalError::UnknownAuthority(p.index));
        }
        if !seen.insert(p.index) {
            return Err(RetrievalError::DuplicateIndex(p.index));
        }
        if !verify_partial(params, public, token, p) {
            return Err(RetrievalError::InvalidPartial(p.index));
        }
    }
    if partials.len() < public.threshold {
        return Err(RetrievalError::BelowThreshold {
            needed: public.threshold,
            got: partials.len(),
        });
    }
    let used = &partials[..public.threshold];
    let indices: Vec<u32> = used.iter().map(|p| p.index).collect();
    let mask = used.iter().fold(G1::identity(), |acc, p| {
        acc + p.share * lagrange_at_zero(p.index, &indices)
    });
    Ok(token.c2 - mask)
}
