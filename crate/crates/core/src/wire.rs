//! Versioned binary envelope and the hex-in-JSON helpers.
//!
//! An envelope is `version:u8 ‖ type:u8 ‖ field*`, each field a big-endian
//! `u16` length followed by that many bytes. Fields appear in a fixed order
//! per message type and trailing bytes are an error.

use serde::{de::Error as _, Deserialize, Deserializer, Serializer};
use thiserror::Error;

use crate::groups::{scalar_from_slice, scalar_to_bytes, GroupElement, GroupError, Scalar};

pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("expected message type {expected:#04x}, got {got:#04x}")]
    MessageType { expected: u8, got: u8 },
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("field too long: {0} bytes")]
    FieldTooLong(usize),
    #[error("malformed field: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    PublicKey = 0x01,
    Credential = 0x02,
    ShowProof = 0x03,
    SigmaProof = 0x04,
    RequestId = 0x10,
    BlindedCredential = 0x11,
    SignOnRequest = 0x12,
    SignOnResult = 0x13,
    EnrollInit = 0x14,
    EnrollApprove = 0x15,
    EnrollComplete = 0x16,
    RotationRequest = 0x17,
    RetrievalReport = 0x18,
    RetrievalToken = 0x20,
    PartialDecryption = 0x21,
}

/// A message with a binary envelope encoding.
pub trait Envelope: Sized {
    fn encode(&self) -> Vec<u8>;
    fn decode(bytes: &[u8]) -> Result<Self, String>;
}

/// Field-by-field envelope writer.
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(ty: MessageType) -> Self {
        Self {
            buf: vec![WIRE_VERSION, ty as u8],
        }
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        assert!(field.len() <= u16::MAX as usize, "wire field too long");
        self.buf
            .extend_from_slice(&(field.len() as u16).to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn elem<G: GroupElement>(&mut self, e: &G) -> &mut Self {
        self.bytes(&e.to_bytes())
    }

    pub fn scalar(&mut self, s: &Scalar) -> &mut Self {
        self.bytes(&scalar_to_bytes(s))
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.bytes(&[v])
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn opt(&mut self, field: Option<&[u8]>) -> &mut Self {
        self.bytes(field.unwrap_or(&[]))
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

/// Field-by-field envelope reader; call [`Reader::end`] once all fields are read.
pub struct Reader<'a> {
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], ty: MessageType) -> Result<Self, WireError> {
        match bytes {
            [v, _, ..] if *v != WIRE_VERSION => Err(WireError::Version(*v)),
            [_, t, rest @ ..] if *t == ty as u8 => Ok(Self { rest }),
            [_, t, ..] => Err(WireError::MessageType {
                expected: ty as u8,
                got: *t,
            }),
            _ => Err(WireError::Truncated),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        if self.rest.len() < 2 {
            return Err(WireError::Truncated);
        }
        let len = u16::from_be_bytes([self.rest[0], self.rest[1]]) as usize;
        let body = self.rest.get(2..2 + len).ok_or(WireError::Truncated)?;
        self.rest = &self.rest[2 + len..];
        Ok(body)
    }

    pub fn elem<G: GroupElement>(&mut self) -> Result<G, WireError> {
        Ok(G::from_slice(self.bytes()?)?)
    }

    pub fn opt_elem<G: GroupElement>(&mut self) -> Result<Option<G>, WireError> {
        let b = self.bytes()?;
        if b.is_empty() {
            return Ok(None);
        }
        Ok(Some(G::from_slice(b)?))
    }

    pub fn scalar(&mut self) -> Result<Scalar, WireError> {
        Ok(scalar_from_slice(self.bytes()?)?)
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let b: [u8; 8] = self
            .bytes()?
            .try_into()
            .map_err(|_| WireError::Malformed("u64"))?;
        Ok(u64::from_be_bytes(b))
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        match self.bytes()? {
            [v] => Ok(*v),
            _ => Err(WireError::Malformed("u8")),
        }
    }

    pub fn string(&mut self) -> Result<String, WireError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| WireError::Malformed("utf-8"))
    }

    pub fn end(self) -> Result<(), WireError> {
        match self.rest.len() {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

/// Packs a list of byte strings into one field body (`u16` count, then length-prefixed items).
pub fn pack_list<I, B>(items: I) -> Vec<u8>
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let items: Vec<B> = items.into_iter().collect();
    let mut out = (items.len() as u16).to_be_bytes().to_vec();
    for it in &items {
        let it = it.as_ref();
        out.extend_from_slice(&(it.len() as u16).to_be_bytes());
        out.extend_from_slice(it);
    }
    out
}

pub fn unpack_list(body: &[u8]) -> Result<Vec<&[u8]>, WireError> {
    if body.len() < 2 {
        return Err(WireError::Truncated);
    }
    let count = u16::from_be_bytes([body[0], body[1]]) as usize;
    let mut rest = &body[2..];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if rest.len() < 2 {
            return Err(WireError::Truncated);
        }
        let len = u16::from_be_bytes([rest[0], rest[1]]) as usize;
        out.push(rest.get(2..2 + len).ok_or(WireError::Truncated)?);
        rest = &rest[2 + len..];
    }
    if !rest.is_empty() {
        return Err(WireError::Trailing(rest.len()));
    }
    Ok(out)
}

/// `#[serde(with = "hex_elem")]` for group elements.
pub mod hex_elem {
    use super::*;

    pub fn serialize<G: GroupElement, S: Serializer>(e: &G, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(e.to_bytes()))
    }

    pub fn deserialize<'de, G: GroupElement, D: Deserializer<'de>>(d: D) -> Result<G, D::Error> {
        let raw = String::deserialize(d)?;
        let bytes = hex::decode(raw).map_err(D::Error::custom)?;
        G::from_slice(&bytes).map_err(D::Error::custom)
    }
}

/// `#[serde(with = "hex_scalar")]` for scalars.
pub mod hex_scalar {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Scalar, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(scalar_to_bytes(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Scalar, D::Error> {
        let raw = String::deserialize(d)?;
        let bytes = hex::decode(raw).map_err(D::Error::custom)?;
        scalar_from_slice(&bytes).map_err(D::Error::custom)
    }
}

/// `#[serde(with = "hex_bytes")]` for raw byte strings.
pub mod hex_bytes {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let raw = String::deserialize(d)?;
        hex::decode(raw).map_err(D::Error::custom)
    }
}

/// `#[serde(with = "hex_elems")]` for lists of group elements.
pub mod hex_elems {
    use super::*;

    pub fn serialize<G: GroupElement, S: Serializer>(v: &[G], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|e| hex::encode(e.to_bytes())))
    }

    pub fn deserialize<'de, G: GroupElement, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<G>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|h| {
                let b = hex::decode(h).map_err(D::Error::custom)?;
                G::from_slice(&b).map_err(D::Error::custom)
            })
            .collect()
    }
}

/// `#[serde(with = "hex_opt_elem")]` for optional group elements.
pub mod hex_opt_elem {
    use super::*;

    pub fn serialize<G: GroupElement, S: Serializer>(
        e: &Option<G>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        match e {
            Some(e) => s.serialize_some(&hex::encode(e.to_bytes())),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, G: GroupElement, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<G>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|h| {
                let b = hex::decode(h).map_err(D::Error::custom)?;
                G::from_slice(&b).map_err(D::Error::custom)
            })
            .transpose()
    }
}

/// `#[serde(with = "hex_proof")]` for sigma proofs.
pub mod hex_proof {
    use super::*;
    use crate::nizk::SigmaProof;

    pub fn serialize<S: Serializer>(p: &SigmaProof, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(p.to_bytes()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SigmaProof, D::Error> {
        let raw = String::deserialize(d)?;
        let b = hex::decode(raw).map_err(D::Error::custom)?;
        SigmaProof::from_bytes(&b).map_err(D::Error::custom)
    }
}
