//! Passphrase-encrypted keystore.
//!
//! On disk: a JSON envelope with the KDF parameters, a nonce and the
//! ChaCha20-Poly1305 ciphertext of the JSON payload. The key is
//! Argon2id(passphrase, salt). Writes go to a temporary file that is synced
//! and renamed over the old one. A sibling `.lock` file serializes commands.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use argon2::{Algorithm, Argon2, Params, Version};
use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{ChaCha20Poly1305, KeyInit, Nonce};
use elpasso_core::protocol::{CredentialBundle, UserSecrets};
use elpasso_core::wire::hex_bytes;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const AAD: &[u8] = b"elpasso-keystore-v1";

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("no keystore at {0}; run `elpasso init` first")]
    Missing(PathBuf),
    #[error("a keystore already exists at {0}")]
    Exists(PathBuf),
    #[error("keystore is in use by another command")]
    Locked,
    #[error("wrong passphrase or corrupted keystore")]
    Decrypt,
    #[error("unsupported keystore format {0}")]
    Version(u32),
    #[error("keystore I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("keystore encoding: {0}")]
    Encoding(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KdfParams {
    alg: String,
    #[serde(with = "hex_bytes")]
    salt: Vec<u8>,
    m_cost: u32,
    t_cost: u32,
    p_cost: u32,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u32,
    kdf: KdfParams,
    #[serde(with = "hex_bytes")]
    nonce: Vec<u8>,
    #[serde(with = "hex_bytes")]
    ciphertext: Vec<u8>,
}

/// Secrets as stored: the scalar pair in its fixed 64-byte encoding.
#[derive(Clone, Serialize, Deserialize)]
pub struct StoredSecrets(#[serde(with = "hex_bytes")] Vec<u8>);

impl StoredSecrets {
    pub fn new(s: &UserSecrets) -> Self {
        Self(s.to_secret_bytes().to_vec())
    }

    pub fn open(&self) -> Result<UserSecrets, KeystoreError> {
        UserSecrets::from_secret_bytes(&self.0).map_err(|e| KeystoreError::Encoding(e.to_string()))
    }
}

impl std::fmt::Debug for StoredSecrets {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StoredSecrets(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Retired {
    pub secrets: StoredSecrets,
    pub credential: CredentialBundle,
}

/// Everything held for one IdP origin. Entries never share secrets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdpEntry {
    pub name: String,
    pub login: String,
    #[serde(with = "hex_bytes")]
    pub pk: Vec<u8>,
    #[serde(default)]
    pub secrets: Option<StoredSecrets>,
    #[serde(default)]
    pub credential: Option<CredentialBundle>,
    /// Whether the credential binds this device's secret.
    #[serde(default)]
    pub two_fa: bool,
    /// Secret and credential being rotated away from.
    #[serde(default)]
    pub retired: Option<Retired>,
    /// Ephemeral key of an enrollment waiting for approval.
    #[serde(default, with = "opt_hex")]
    pub pending_enroll: Option<Vec<u8>>,
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|h| hex::decode(h).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeystoreData {
    pub device_id: String,
    /// Keyed by IdP base URL.
    #[serde(default)]
    pub idps: BTreeMap<String, IdpEntry>,
}

/// An unlocked keystore; holds the file lock until dropped.
pub struct Keystore {
    path: PathBuf,
    key: [u8; 32],
    kdf: KdfParams,
    pub data: KeystoreData,
    _lock: File,
}

fn lock_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".lock");
    PathBuf::from(p)
}

fn acquire(path: &Path) -> Result<File, KeystoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(lock_path(path))?;
    match f.try_lock() {
        Ok(()) => Ok(f),
        Err(fs::TryLockError::WouldBlock) => Err(KeystoreError::Locked),
        Err(fs::TryLockError::Error(e)) => Err(e.into()),
    }
}

fn derive_key(passphrase: &str, kdf: &KdfParams) -> Result<[u8; 32], KeystoreError> {
    if kdf.alg != "argon2id" {
        return Err(KeystoreError::Encoding(format!("unknown KDF {}", kdf.alg)));
    }
    let params = Params::new(kdf.m_cost, kdf.t_cost, kdf.p_cost, Some(32))
        .map_err(|e| KeystoreError::Encoding(e.to_string()))?;
    let mut key = [0u8; 32];
    Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
        .hash_password_into(passphrase.as_bytes(), &kdf.salt, &mut key)
        .map_err(|e| KeystoreError::Encoding(e.to_string()))?;
    Ok(key)
}

impl Keystore {
    pub fn create(path: &Path, passphrase: &str, device_id: &str) -> Result<Self, KeystoreError> {
        let lock = acquire(path)?;
        if path.exists() {
            return Err(KeystoreError::Exists(path.to_path_buf()));
        }
        let mut salt = vec![0u8; 16];
        OsRng.fill_bytes(&mut salt);
        let kdf = KdfParams {
            alg: "argon2id".into(),
            salt,
            m_cost: Params::DEFAULT_M_COST,
            t_cost: Params::DEFAULT_T_COST,
            p_cost: Params::DEFAULT_P_COST,
        };
        let ks = Self {
            path: path.to_path_buf(),
            key: derive_key(passphrase, &kdf)?,
            kdf,
            data: KeystoreData {
                device_id: device_id.to_string(),
                idps: BTreeMap::new(),
            },
            _lock: lock,
        };
        ks.save()?;
        Ok(ks)
    }

    pub fn open(path: &Path, passphrase: &str) -> Result<Self, KeystoreError> {
        let lock = acquire(path)?;
        let raw = match fs::read(path) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(KeystoreError::Missing(path.to_path_buf()))
            }
            Err(e) => return Err(e.into()),
        };
        let env: Envelope =
            serde_json::from_slice(&raw).map_err(|e| KeystoreError::Encoding(e.to_string()))?;
        if env.version != FORMAT_VERSION {
            return Err(KeystoreError::Version(env.version));
        }
        if env.nonce.len() != 12 {
            return Err(KeystoreError::Decrypt);
        }
        let key = derive_key(passphrase, &env.kdf)?;
        let plain = ChaCha20Poly1305::new(&key.into())
            .decrypt(
                Nonce::from_slice(&env.nonce),
                Payload {
                    msg: &env.ciphertext,
                    aad: AAD,
                },
            )
            .map_err(|_| KeystoreError::Decrypt)?;
        let data =
            serde_json::from_slice(&plain).map_err(|e| KeystoreError::Encoding(e.to_string()))?;
        Ok(Self {
            path: path.to_path_buf(),
            key,
            kdf: env.kdf,
            data,
            _lock: lock,
        })
    }

    pub fn save(&self) -> Result<(), KeystoreError> {
        let plain =
            serde_json::to_vec(&self.data).map_err(|e| KeystoreError::Encoding(e.to_string()))?;
        let mut nonce = [0u8; 12];
        OsRng.fill_bytes(&mut nonce);
        let ciphertext = ChaCha20Poly1305::new(&self.key.into())
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &plain,
                    aad: AAD,
                },
            )
            .map_err(|_| KeystoreError::Encoding("encryption failed".into()))?;
        let env = Envelope {
            version: FORMAT_VERSION,
            kdf: self.kdf.clone(),
            nonce: nonce.to_vec(),
            ciphertext,
        };
        let bytes =
            serde_json::to_vec_pretty(&env).map_err(|e| KeystoreError::Encoding(e.to_string()))?;
        let mut tmp = self.path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut opts = OpenOptions::new();
            opts.create(true).truncate(true).write(true);
            #[cfg(unix)]
            {
                use std::os::unix::fs::OpenOptionsExt;
                opts.mode(0o600);
            }
            let mut f = opts.open(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
