//! Moving `s` to a new device through the IdP relay.
//!
//! The new device posts an ephemeral public key ([`EnrollInit`]) and shows
//! [`fingerprint`] of that key under a salt the user types on both devices.
//! The old device recomputes the fingerprint, agrees a key with a fresh
//! ephemeral of its own and seals `s` ([`EnrollApprove`]). The IdP only
//! relays; the new device opens the ciphertext and draws a fresh `s_d`.

use std::fmt;

use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{ChaCha20Poly1305, KeyInit, Nonce};
use group::Group;
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ProtocolError, UserSecrets};
use crate::groups::{
    exp, random_scalar, scalar_from_slice, scalar_to_bytes, GroupElement, Scalar, G1,
};
use crate::wire::{hex_bytes, hex_elem, MessageType, Reader, WireError, Writer};

const NONCE_LEN: usize = 12;

/// New device → IdP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollInit {
    pub device_id: String,
    #[serde(with = "hex_elem")]
    pub device_pk: G1,
}

/// Old device → IdP: `s` sealed to the new device's key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollApprove {
    pub device_id: String,
    #[serde(with = "hex_elem")]
    pub device_pk: G1,
    #[serde(with = "hex_elem")]
    pub approver_pk: G1,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
}

/// IdP → new device: the approval relayed unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollComplete {
    pub device_id: String,
    #[serde(with = "hex_elem")]
    pub approver_pk: G1,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
}

impl From<&EnrollApprove> for EnrollComplete {
    fn from(a: &EnrollApprove) -> Self {
        Self {
            device_id: a.device_id.clone(),
            approver_pk: a.approver_pk,
            nonce: a.nonce.clone(),
            ciphertext: a.ciphertext.clone(),
        }
    }
}

impl EnrollInit {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::EnrollInit)
            .str(&self.device_id)
            .elem(&self.device_pk)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::EnrollInit)?;
        let m = Self {
            device_id: r.string()?,
            device_pk: r.elem()?,
        };
        r.end()?;
        Ok(m)
    }
}

impl EnrollApprove {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::EnrollApprove)
            .str(&self.device_id)
            .elem(&self.device_pk)
            .elem(&self.approver_pk)
            .bytes(&self.nonce)
            .bytes(&self.ciphertext)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::EnrollApprove)?;
        let m = Self {
            device_id: r.string()?,
            device_pk: r.elem()?,
            approver_pk: r.elem()?,
            nonce: r.bytes()?.to_vec(),
            ciphertext: r.bytes()?.to_vec(),
        };
        r.end()?;
        Ok(m)
    }
}

impl EnrollComplete {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::EnrollComplete)
            .str(&self.device_id)
            .elem(&self.approver_pk)
            .bytes(&self.nonce)
            .bytes(&self.ciphertext)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::EnrollComplete)?;
        let m = Self {
            device_id: r.string()?,
            approver_pk: r.elem()?,
            nonce: r.bytes()?.to_vec(),
            ciphertext: r.bytes()?.to_vec(),
        };
        r.end()?;
        Ok(m)
    }
}

/// The new device's ephemeral key, kept until the relayed approval arrives.
#[derive(Clone)]
pub struct EnrollEphemeral {
    device_id: String,
    secret: Scalar,
    pk: G1,
}

impl fmt::Debug for EnrollEphemeral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnrollEphemeral")
            .field("device_id", &self.device_id)
            .finish_non_exhaustive()
    }
}

impl EnrollEphemeral {
    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn public(&self) -> &G1 {
        &self.pk
    }

    /// For an encrypted keystore only.
    pub fn to_secret_bytes(&self) -> Vec<u8> {
        let mut out = scalar_to_bytes(&self.secret).to_vec();
        out.extend_from_slice(self.device_id.as_bytes());
        out
    }

    pub fn from_secret_bytes(b: &[u8]) -> Result<Self, ProtocolError> {
        if b.len() < 32 {
            return Err(ProtocolError::Malformed("ephemeral key"));
        }
        let secret = scalar_from_slice(&b[..32]).map_err(WireError::from)?;
        let device_id = String::from_utf8(b[32..].to_vec())
            .map_err(|_| ProtocolError::Malformed("device id"))?;
        Ok(Self {
            device_id,
            secret,
            pk: exp(&G1::generator(), &secret),
        })
    }
}

/// Short code shown on both devices: first 8 bytes of `H(pk ‖ salt)` as four hex groups.
pub fn fingerprint(pk: &G1, salt: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"elpasso/enroll-fp:");
    h.update(pk.to_bytes());
    h.update(salt.as_bytes());
    let d = h.finalize();
    d[..8]
        .chunks(2)
        .map(hex::encode)
        .collect::<Vec<_>>()
        .join("-")
}

fn normalize_fp(fp: &str) -> String {
    fp.chars()
        .filter(|c| c.is_ascii_hexdigit())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn transcript(device_id: &str, device_pk: &G1, approver_pk: &G1) -> Vec<u8> {
    let mut t = b"elpasso/enroll/v1:".to_vec();
    t.extend_from_slice(&(device_id.len() as u32).to_be_bytes());
    t.extend_from_slice(device_id.as_bytes());
    t.extend_from_slice(&device_pk.to_bytes());
    t.extend_from_slice(&approver_pk.to_bytes());
    t
}

fn cipher(shared: &G1, salt: &str, transcript: &[u8]) -> ChaCha20Poly1305 {
    let mut hk_salt = b"elpasso/enroll-salt:".to_vec();
    hk_salt.extend_from_slice(salt.as_bytes());
    let hk = Hkdf::<Sha256>::new(Some(&hk_salt), &shared.to_bytes());
    let mut key = [0u8; 32];
    hk.expand(transcript, &mut key)
        .expect("32 bytes is a valid HKDF length");
    ChaCha20Poly1305::new(&key.into())
}

fn nonzero_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    loop {
        let k = random_scalar(rng);
        if !bool::from(ff::Field::is_zero(&k)) {
            return k;
        }
    }
}

/// Step 1, on the new device.
pub fn enroll_init<R: RngCore + CryptoRng>(
    device_id: &str,
    rng: &mut R,
) -> (EnrollEphemeral, EnrollInit) {
    let secret = nonzero_scalar(rng);
    let pk = exp(&G1::generator(), &secret);
    (
        EnrollEphemeral {
            device_id: device_id.to_string(),
            secret,
            pk,
        },
        EnrollInit {
            device_id: device_id.to_string(),
            device_pk: pk,
        },
    )
}

/// Step 2, on the old device. `shown_fingerprint` is what the new device displays.
pub fn enroll_approve<R: RngCore + CryptoRng>(
    secrets: &UserSecrets,
    init: &EnrollInit,
    salt: &str,
    shown_fingerprint: &str,
    rng: &mut R,
) -> Result<EnrollApprove, ProtocolError> {
    if normalize_fp(&fingerprint(&init.device_pk, salt)) != normalize_fp(shown_fingerprint)
        || bool::from(init.device_pk.is_identity())
    {
        return Err(ProtocolError::FingerprintMismatch);
    }
    let e = nonzero_scalar(rng);
    let approver_pk = exp(&G1::generator(), &e);
    let shared = exp(&init.device_pk, &e);
    let aad = transcript(&init.device_id, &init.device_pk, &approver_pk);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ciphertext = cipher(&shared, salt, &aad)
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: &scalar_to_bytes(secrets.s()),
                aad: &aad,
            },
        )
        .expect("in-memory encryption");
    Ok(EnrollApprove {
        device_id: init.device_id.clone(),
        device_pk: init.device_pk,
        approver_pk,
        nonce: nonce.to_vec(),
        ciphertext,
    })
}

/// Step 3, on the new device: recovers `s` and draws a fresh `s_d`.
pub fn enroll_complete<R: RngCore + CryptoRng>(
    eph: &EnrollEphemeral,
    msg: &EnrollComplete,
    salt: &str,
    rng: &mut R,
) -> Result<UserSecrets, ProtocolError> {
    if msg.device_id != eph.device_id || msg.nonce.len() != NONCE_LEN {
        return Err(ProtocolError::EnrollmentDecrypt);
    }
    let shared = exp(&msg.approver_pk, &eph.secret);
    let aad = transcript(&eph.device_id, &eph.pk, &msg.approver_pk);
    let plain = cipher(&shared, salt, &aad)
        .decrypt(
            Nonce::from_slice(&msg.nonce),
            Payload {
                msg: &msg.ciphertext,
                aad: &aad,
            },
        )
        .map_err(|_| ProtocolError::EnrollmentDecrypt)?;
    let s = scalar_from_slice(&plain).map_err(|_| ProtocolError::EnrollmentDecrypt)?;
    Ok(UserSecrets::for_new_device(s, rng))
}
