//! Schnorr-style sigma protocols for conjunctions of multi-base
//! discrete-log representations, compiled with Fiat–Shamir.
//!
//! A [`Statement`] is a list of equations `T = Σ_k base_k · w[idx_k]`
//! (additive notation) over G1 or G2, sharing one witness vector. All
//! equations share a single challenge; there is one response per witness.

use group::Group;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha512};
use thiserror::Error;

use crate::groups::{
    multi_exp, random_scalar, scalar_from_slice, scalar_from_wide, scalar_to_bytes, GroupElement,
    Scalar, G1, G2, SCALAR_LEN,
};

const PROTOCOL_TAG: &[u8] = b"elpasso/nizk/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NizkError {
    #[error("statement expects {expected} witnesses, got {got}")]
    WitnessCount { expected: usize, got: usize },
    #[error("equation {equation} references witness {index} outside 0..{count}")]
    IndexOutOfRange {
        equation: usize,
        index: usize,
        count: usize,
    },
    #[error("witness {0} is not referenced by any equation")]
    UnusedWitness(usize),
    #[error("equation {0} mixes G1 and G2 elements")]
    MixedGroups(usize),
    #[error("equation {0} has no terms")]
    EmptyEquation(usize),
    #[error("witnesses do not satisfy equation {0}")]
    Unsatisfied(usize),
    #[error("malformed proof encoding")]
    Encoding,
}

/// A group element from either source group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Point {
    G1(G1),
    G2(G2),
}

impl Point {
    fn tag(&self) -> u8 {
        match self {
            Point::G1(_) => 1,
            Point::G2(_) => 2,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Point::G1(p) => p.to_bytes(),
            Point::G2(p) => p.to_bytes(),
        }
    }
}

impl From<G1> for Point {
    fn from(p: G1) -> Self {
        Point::G1(p)
    }
}

impl From<G2> for Point {
    fn from(p: G2) -> Self {
        Point::G2(p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equation {
    pub target: Point,
    pub terms: Vec<(Point, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    equations: Vec<Equation>,
    witness_count: usize,
    context: Vec<u8>,
}

impl Statement {
    pub fn new(witness_count: usize, context: impl Into<Vec<u8>>) -> Self {
        Self {
            equations: Vec::new(),
            witness_count,
            context: context.into(),
        }
    }

    pub fn equation(
        mut self,
        target: impl Into<Point>,
        terms: impl IntoIterator<Item = (Point, usize)>,
    ) -> Self {
        self.push(target, terms);
        self
    }

    pub fn push(
        &mut self,
        target: impl Into<Point>,
        terms: impl IntoIterator<Item = (Point, usize)>,
    ) {
        self.equations.push(Equation {
            target: target.into(),
            terms: terms.into_iter().collect(),
        });
    }

    pub fn equations(&self) -> &[Equation] {
        &self.equations
    }

    pub fn witness_count(&self) -> usize {
        self.witness_count
    }

    pub fn context(&self) -> &[u8] {
        &self.context
    }

    pub fn with_context(mut self, context: impl Into<Vec<u8>>) -> Self {
        self.context = context.into();
        self
    }

    pub fn validate(&self) -> Result<(), NizkError> {
        let mut used = vec![false; self.witness_count];
        for (e, eq) in self.equations.iter().enumerate() {
            if eq.terms.is_empty() {
                return Err(NizkError::EmptyEquation(e));
            }
            for (base, idx) in &eq.terms {
                if base.tag() != eq.target.tag() {
                    return Err(NizkError::MixedGroups(e));
                }
                *used.get_mut(*idx).ok_or(NizkError::IndexOutOfRange {
                    equation: e,
                    index: *idx,
                    count: self.witness_count,
                })? = true;
            }
        }
        match used.iter().position(|u| !u) {
            Some(i) => Err(NizkError::UnusedWitness(i)),
            None => Ok(()),
        }
    }

    /// Byte-stable statement encoding: witness count, then per equation the
    /// group tag, target and `(witness index, base)` terms. Context is not included.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.witness_count as u32).to_be_bytes());
        out.extend_from_slice(&(self.equations.len() as u32).to_be_bytes());
        for eq in &self.equations {
            out.push(eq.target.tag());
            out.extend_from_slice(&eq.target.to_bytes());
            out.extend_from_slice(&(eq.terms.len() as u32).to_be_bytes());
            for (base, idx) in &eq.terms {
                out.extend_from_slice(&(*idx as u32).to_be_bytes());
                out.extend_from_slice(&base.to_bytes());
            }
        }
        out
    }

    /// Evaluates `Σ base · scalars[idx]` for each equation.
    fn evaluate(&self, scalars: &[Scalar]) -> Vec<Point> {
        self.equations
            .iter()
            .map(|eq| match eq.target {
                Point::G1(_) => Point::G1(lincomb::<G1>(&eq.terms, scalars, None)),
                Point::G2(_) => Point::G2(lincomb::<G2>(&eq.terms, scalars, None)),
            })
            .collect()
    }

    pub fn is_satisfied_by(&self, witnesses: &[Scalar]) -> Result<(), NizkError> {
        self.validate()?;
        if witnesses.len() != self.witness_count {
            return Err(NizkError::WitnessCount {
                expected: self.witness_count,
                got: witnesses.len(),
            });
        }
        for (e, (eq, value)) in self
            .equations
            .iter()
            .zip(self.evaluate(witnesses))
            .enumerate()
        {
            if eq.target != value {
                return Err(NizkError::Unsatisfied(e));
            }
        }
        Ok(())
    }
}

trait Project: GroupElement {
    fn project(p: &Point) -> Self;
}

impl Project for G1 {
    fn project(p: &Point) -> Self {
        match p {
            Point::G1(v) => *v,
            Point::G2(_) => unreachable!("validated statement"),
        }
    }
}

impl Project for G2 {
    fn project(p: &Point) -> Self {
        match p {
            Point::G2(v) => *v,
            Point::G1(_) => unreachable!("validated statement"),
        }
    }
}

fn lincomb<G: Project>(
    terms: &[(Point, usize)],
    scalars: &[Scalar],
    extra: Option<(&Point, &Scalar)>,
) -> G {
    let mut bases: Vec<G> = terms.iter().map(|(b, _)| G::project(b)).collect();
    let mut coeffs: Vec<Scalar> = terms.iter().map(|(_, i)| scalars[*i]).collect();
    if let Some((p, s)) = extra {
        bases.push(G::project(p));
        coeffs.push(*s);
    }
    multi_exp(&bases, &coeffs).expect("equal lengths by construction")
}

/// Append-only Fiat–Shamir transcript.
#[derive(Clone)]
pub struct Transcript {
    hasher: Sha512,
}

impl Transcript {
    pub fn new(tag: &[u8]) -> Self {
        let mut t = Self {
            hasher: Sha512::new(),
        };
        t.append(b"tag", tag);
        t
    }

    pub fn append(&mut self, label: &[u8], data: &[u8]) {
        self.hasher.update((label.len() as u32).to_be_bytes());
        self.hasher.update(label);
        self.hasher.update((data.len() as u64).to_be_bytes());
        self.hasher.update(data);
    }
}

pub fn derive_challenge(transcript: &Transcript) -> Scalar {
    let digest: [u8; 64] = transcript.hasher.clone().finalize().into();
    scalar_from_wide(&digest)
}

fn challenge_for(statement: &Statement, commitments: &[Point]) -> Scalar {
    let mut t = Transcript::new(PROTOCOL_TAG);
    t.append(b"curve", b"BLS12-381");
    t.append(b"statement", &statement.to_bytes());
    for c in commitments {
        t.append(b"commitment", &c.to_bytes());
    }
    t.append(b"context", &statement.context);
    derive_challenge(&t)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigmaProof {
    pub challenge: Scalar,
    pub responses: Vec<Scalar>,
}

impl SigmaProof {
    /// `challenge ‖ responses`, 32 bytes each.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SCALAR_LEN * (1 + self.responses.len()));
        out.extend_from_slice(&scalar_to_bytes(&self.challenge));
        for r in &self.responses {
            out.extend_from_slice(&scalar_to_bytes(r));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NizkError> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(SCALAR_LEN) {
            return Err(NizkError::Encoding);
        }
        let mut scalars = bytes
            .chunks_exact(SCALAR_LEN)
            .map(|c| scalar_from_slice(c).map_err(|_| NizkError::Encoding));
        let challenge = scalars.next().ok_or(NizkError::Encoding)??;
        let responses = scalars.collect::<Result<_, _>>()?;
        Ok(Self {
            challenge,
            responses,
        })
    }
}

pub fn prove<R: RngCore + CryptoRng>(
    statement: &Statement,
    witnesses: &[Scalar],
    rng: &mut R,
) -> Result<SigmaProof, NizkError> {
    statement.is_satisfied_by(witnesses)?;
    let nonces: Vec<Scalar> = (0..statement.witness_count)
        .map(|_| random_scalar(rng))
        .collect();
    let commitments = statement.evaluate(&nonces);
    let challenge = challenge_for(statement, &commitments);
    let responses = nonces
        .iter()
        .zip(witnesses)
        .map(|(k, x)| k - challenge * x)
        .collect();
    Ok(SigmaProof {
        challenge,
        responses,
    })
}

pub fn verify(statement: &Statement, proof: &SigmaProof) -> bool {
    if statement.validate().is_err() || proof.responses.len() != statement.witness_count {
        return false;
    }
    let c = proof.challenge;
    // R = Σ base·z + c·T
    let commitments: Vec<Point> = statement
        .equations
        .iter()
        .map(|eq| match eq.target {
            Point::G1(_) => Point::G1(lincomb::<G1>(
                &eq.terms,
                &proof.responses,
                Some((&eq.target, &c)),
            )),
            Point::G2(_) => Point::G2(lincomb::<G2>(
                &eq.terms,
                &proof.responses,
                Some((&eq.target, &c)),
            )),
        })
        .collect();
    challenge_for(statement, &commitments) == c
}

/// True when every target in the statement is the group identity.
pub fn is_trivial(statement: &Statement) -> bool {
    statement.equations.iter().all(|eq| match eq.target {
        Point::G1(p) => bool::from(p.is_identity()),
        Point::G2(p) => bool::from(p.is_identity()),
    })
}
