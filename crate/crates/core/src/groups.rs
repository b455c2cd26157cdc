//! Bilinear-group layer over BLS12-381.
//!
//! Every other module goes through this one for curve arithmetic, encodings
//! and hashing into the groups. Encodings are the normative wire
//! representation: scalars are 32-byte big-endian and canonical, group
//! elements use the compressed ZCash/IETF BLS12-381 format (48 bytes in G1,
//! 96 bytes in G2). The identity of G1 is `0xc0 ‖ 0^47`; an all-zero string
//! lacks the compression flag and is rejected.

use std::fmt::Debug;
use std::sync::OnceLock;

use blstrs::{Bls12, G2Prepared};
use ff::{Field, PrimeField};
use group::{Curve as _, Group};
use pairing::{MillerLoopResult, MultiMillerLoop};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha512};
use thiserror::Error;

pub use blstrs::{G1Affine, G1Projective as G1, G2Affine, G2Projective as G2, Gt, Scalar};

pub const SCALAR_LEN: usize = 32;
pub const G1_LEN: usize = 48;
pub const G2_LEN: usize = 96;

/// Domain-separation tag for hashing into G1 (RFC 9380 suite, SSWU random oracle).
pub const HASH_TO_G1_DST: &[u8] = b"ELPASSO-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("unsupported security level: {0} bits")]
    UnsupportedSecurityLevel(u32),
    #[error("wrong encoding length for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid {0} encoding")]
    InvalidEncoding(&'static str),
    #[error("scalar encoding is not reduced modulo the group order")]
    NonCanonicalScalar,
    #[error("multi-exponentiation length mismatch: {bases} bases, {scalars} scalars")]
    LengthMismatch { bases: usize, scalars: usize },
}

/// The pairing-friendly curve behind the group interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Curve {
    Bls12_381,
}

impl Curve {
    pub fn id(self) -> u8 {
        match self {
            Curve::Bls12_381 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Curve::Bls12_381 => "BLS12-381",
        }
    }
}

/// Serialized lengths of each kind of value for the chosen curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodedSizes {
    pub scalar: usize,
    pub g1: usize,
    pub g2: usize,
}

/// System-wide public parameters: group descriptor and fixed generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicParams {
    curve: Curve,
    g: G1,
    g_tilde: G2,
    sizes: EncodedSizes,
}

impl PublicParams {
    pub fn setup(security_bits: u32) -> Result<Self, GroupError> {
        match security_bits {
            128 => Ok(Self {
                curve: Curve::Bls12_381,
                g: G1::generator(),
                g_tilde: G2::generator(),
                sizes: EncodedSizes {
                    scalar: SCALAR_LEN,
                    g1: G1_LEN,
                    g2: G2_LEN,
                },
            }),
            other => Err(GroupError::UnsupportedSecurityLevel(other)),
        }
    }

    pub fn curve(&self) -> Curve {
        self.curve
    }

    pub fn g(&self) -> G1 {
        self.g
    }

    pub fn g_tilde(&self) -> G2 {
        self.g_tilde
    }

    pub fn sizes(&self) -> EncodedSizes {
        self.sizes
    }

    /// Canonical byte string identifying these parameters (used in transcripts).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + G1_LEN + G2_LEN);
        out.push(self.curve.id());
        out.extend_from_slice(&self.g.to_bytes());
        out.extend_from_slice(&self.g_tilde.to_bytes());
        out
    }
}

impl Default for PublicParams {
    fn default() -> Self {
        Self::setup(128).expect("128-bit level is always supported")
    }
}

/// A prime-order source group (G1 or G2) with a canonical compressed encoding.
pub trait GroupElement: Group<Scalar = Scalar> + Copy + Eq + Debug + Send + Sync + 'static {
    const ENCODED_LEN: usize;
    const NAME: &'static str;

    fn to_bytes(&self) -> Vec<u8>;

    /// Decodes a compressed point, rejecting off-curve and non-subgroup encodings.
    fn from_slice(bytes: &[u8]) -> Result<Self, GroupError>;

    #[doc(hidden)]
    fn msm_unchecked(bases: &[Self], scalars: &[Scalar]) -> Self;
}

impl GroupElement for G1 {
    const ENCODED_LEN: usize = G1_LEN;
    const NAME: &'static str = "G1";

    fn to_bytes(&self) -> Vec<u8> {
        self.to_affine().to_compressed().to_vec()
    }

    fn from_slice(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr: &[u8; G1_LEN] = bytes.try_into().map_err(|_| GroupError::Length {
            what: "G1",
            expected: G1_LEN,
            got: bytes.len(),
        })?;
        Option::<G1Affine>::from(G1Affine::from_compressed(arr))
            .map(G1::from)
            .ok_or(GroupError::InvalidEncoding("G1"))
    }

    fn msm_unchecked(bases: &[Self], scalars: &[Scalar]) -> Self {
        G1::multi_exp(bases, scalars)
    }
}

impl GroupElement for G2 {
    const ENCODED_LEN: usize = G2_LEN;
    const NAME: &'static str = "G2";

    fn to_bytes(&self) -> Vec<u8> {
        self.to_affine().to_compressed().to_vec()
    }

    fn from_slice(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr: &[u8; G2_LEN] = bytes.try_into().map_err(|_| GroupError::Length {
            what: "G2",
            expected: G2_LEN,
            got: bytes.len(),
        })?;
        Option::<G2Affine>::from(G2Affine::from_compressed(arr))
            .map(G2::from)
            .ok_or(GroupError::InvalidEncoding("G2"))
    }

    fn msm_unchecked(bases: &[Self], scalars: &[Scalar]) -> Self {
        G2::multi_exp(bases, scalars)
    }
}

pub fn exp<G: GroupElement>(base: &G, k: &Scalar) -> G {
    *base * k
}

// Below this many non-trivial terms the double-and-add fold beats Pippenger setup.
const MSM_THRESHOLD: usize = 4;

/// Computes `∏ bases[i]^scalars[i]` (written additively: `Σ scalars[i]·bases[i]`).
pub fn multi_exp<G: GroupElement>(bases: &[G], scalars: &[Scalar]) -> Result<G, GroupError> {
    if bases.len() != scalars.len() {
        return Err(GroupError::LengthMismatch {
            bases: bases.len(),
            scalars: scalars.len(),
        });
    }
    let (b, s): (Vec<G>, Vec<Scalar>) = bases
        .iter()
        .zip(scalars)
        .filter(|(b, s)| !bool::from(b.is_identity()) && !bool::from(s.is_zero()))
        .map(|(b, s)| (*b, *s))
        .unzip();
    if b.len() < MSM_THRESHOLD {
        return Ok(b
            .iter()
            .zip(&s)
            .fold(G::identity(), |acc, (b, s)| acc + *b * s));
    }
    Ok(G::msm_unchecked(&b, &s))
}

pub fn pairing(p: &G1, q: &G2) -> Gt {
    blstrs::pairing(&p.to_affine(), &q.to_affine())
}

/// Checks `e(a1, b1) == e(a2, b2)` with a single final exponentiation.
pub fn pairings_equal(a1: &G1, b1: &G2, a2: &G1, b2: &G2) -> bool {
    let lhs_p = a1.to_affine();
    let rhs_p = (-*a2).to_affine();
    let lhs_q = G2Prepared::from(b1.to_affine());
    let rhs_q = G2Prepared::from(b2.to_affine());
    let ml = Bls12::multi_miller_loop(&[(&lhs_p, &lhs_q), (&rhs_p, &rhs_q)]);
    bool::from(ml.final_exponentiation().is_identity())
}

/// Hashes an arbitrary byte string into the prime-order subgroup of G1.
pub fn hash_to_g1(input: &[u8]) -> G1 {
    G1::hash_to_curve(input, HASH_TO_G1_DST, &[])
}

pub fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    Scalar::random(rng)
}

pub fn scalar_to_bytes(s: &Scalar) -> [u8; SCALAR_LEN] {
    s.to_bytes_be()
}

pub fn scalar_from_slice(bytes: &[u8]) -> Result<Scalar, GroupError> {
    let arr: &[u8; SCALAR_LEN] = bytes.try_into().map_err(|_| GroupError::Length {
        what: "scalar",
        expected: SCALAR_LEN,
        got: bytes.len(),
    })?;
    Option::from(Scalar::from_bytes_be(arr)).ok_or(GroupError::NonCanonicalScalar)
}

/// Reduces a 512-bit big-endian integer modulo the group order.
pub fn scalar_from_wide(bytes: &[u8; 64]) -> Scalar {
    // Horner over four 128-bit limbs; each limb is below p so it is canonical.
    let shift = Scalar::from_u128(1u128 << 64).square();
    bytes.chunks_exact(16).fold(Scalar::ZERO, |acc, limb| {
        let v = u128::from_be_bytes(limb.try_into().expect("16-byte limb"));
        acc * shift + Scalar::from_u128(v)
    })
}

/// Hashes length-prefixed parts under a domain-separation tag to a uniform scalar.
pub fn hash_to_scalar(dst: &[u8], parts: &[&[u8]]) -> Scalar {
    let mut h = Sha512::new();
    h.update((dst.len() as u32).to_be_bytes());
    h.update(dst);
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    let digest: [u8; 64] = h.finalize().into();
    scalar_from_wide(&digest)
}

/// Second G1 generator with unknown discrete log relative to `g`.
pub fn retrieval_base() -> G1 {
    static H: OnceLock<G1> = OnceLock::new();
    *H.get_or_init(|| hash_to_g1(b"elpasso:h"))
}

/// The group order `p` as big-endian bytes.
pub fn group_order_be() -> [u8; 32] {
    let mut repr = Scalar::char();
    repr.reverse();
    repr
}
