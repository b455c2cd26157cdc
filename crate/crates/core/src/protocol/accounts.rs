use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::signon::{
    verify_signon, ExpiryRule, Purpose, RejectReason, RotationRequest, SignOnRequest,
    VerifiedSignOn,
};
use crate::groups::{GroupElement, PublicParams, G1};
use crate::pscred::{AttributeValue, IdpPublicKey};
use crate::retrieval::RetrievalToken;
use crate::wire::{hex_elem, hex_elems, hex_opt_elem, MessageType, Reader, WireError, Writer};

pub const NONCE_LEN: usize = 16;

/// Single-use RP nonces. Entries are kept for twice the TTL, then pruned.
#[derive(Debug)]
pub struct NonceCache {
    ttl: u64,
    issued: HashMap<[u8; NONCE_LEN], u64>,
}

impl NonceCache {
    pub fn new(ttl_secs: u64) -> Self {
        Self {
            ttl: ttl_secs,
            issued: HashMap::new(),
        }
    }

    pub fn ttl(&self) -> u64 {
        self.ttl
    }

    pub fn issue<R: RngCore + CryptoRng>(&mut self, now: u64, rng: &mut R) -> Vec<u8> {
        let horizon = 2 * self.ttl;
        self.issued.retain(|_, at| now <= *at + horizon);
        loop {
            let mut n = [0u8; NONCE_LEN];
            rng.fill_bytes(&mut n);
            if let std::collections::hash_map::Entry::Vacant(e) = self.issued.entry(n) {
                e.insert(now);
                return n.to_vec();
            }
        }
    }

    /// Atomically checks freshness and removes the nonce.
    pub fn consume(&mut self, nonce: &[u8], now: u64) -> bool {
        let Ok(key) = <[u8; NONCE_LEN]>::try_from(nonce) else {
            return false;
        };
        match self.issued.remove(&key) {
            Some(at) => now <= at + self.ttl,
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.issued.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issued.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignOnPolicy {
    pub require_retrieval: bool,
    pub require_2fa: bool,
    pub allow_guest: bool,
    /// Seconds within which a second factor must follow the first.
    pub second_factor_window: u64,
}

impl Default for SignOnPolicy {
    fn default() -> Self {
        Self {
            require_retrieval: false,
            require_2fa: false,
            allow_guest: true,
            second_factor_window: 300,
        }
    }
}

impl SignOnPolicy {
    pub fn check(&self, v: &VerifiedSignOn) -> Result<(), RejectReason> {
        let unmet = (self.require_retrieval && v.token.is_none())
            || (v.flags.guest && !self.allow_guest)
            || (self.require_2fa && (v.flags.guest || v.zeta_device.is_none()));
        if unmet {
            Err(RejectReason::PolicyUnmet)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccountAction {
    Created,
    Matched,
    DeviceEnrolled,
    Rotated,
    Guest,
}

impl AccountAction {
    const ALL: [Self; 5] = [
        Self::Created,
        Self::Matched,
        Self::DeviceEnrolled,
        Self::Rotated,
        Self::Guest,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignOnResult {
    pub accepted: bool,
    pub action: Option<AccountAction>,
    pub account_id: Option<String>,
    pub reason: Option<RejectReason>,
}

impl SignOnResult {
    pub fn accept(action: AccountAction, account_id: Option<String>) -> Self {
        Self {
            accepted: true,
            action: Some(action),
            account_id,
            reason: None,
        }
    }

    pub fn reject(reason: RejectReason) -> Self {
        Self {
            accepted: false,
            action: None,
            account_id: None,
            reason: Some(reason),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let action = self.action.map_or(0, |a| a as u8 + 1);
        Writer::new(MessageType::SignOnResult)
            .u8(self.accepted as u8)
            .u8(action)
            .opt(self.account_id.as_deref().map(str::as_bytes))
            .u8(self.reason.map_or(0, RejectReason::code))
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::SignOnResult)?;
        let accepted = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(WireError::Malformed("accepted")),
        };
        let action = match r.u8()? {
            0 => None,
            c => Some(
                *AccountAction::ALL
                    .get(c as usize - 1)
                    .ok_or(WireError::Malformed("action"))?,
            ),
        };
        let id = r.string()?;
        let reason = match r.u8()? {
            0 => None,
            c => Some(RejectReason::from_code(c).ok_or(WireError::Malformed("reason"))?),
        };
        r.end()?;
        Ok(Self {
            accepted,
            action,
            account_id: (!id.is_empty()).then_some(id),
            reason,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingFactor {
    #[serde(with = "hex_elem")]
    pub device: G1,
    pub at: u64,
}

/// RP account keyed by `ζ`; guest accounts have no `ζ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub id: String,
    #[serde(with = "hex_opt_elem", default)]
    pub zeta: Option<G1>,
    #[serde(with = "hex_elems", default)]
    pub devices: Vec<G1>,
    #[serde(default)]
    pub token: Option<RetrievalToken>,
    #[serde(default)]
    pub disclosed: BTreeMap<String, AttributeValue>,
    pub created: u64,
    pub last_seen: u64,
    #[serde(default)]
    pub pending: Option<PendingFactor>,
}

fn account_id(zeta: &G1) -> String {
    let mut h = Sha256::new();
    h.update(b"elpasso/account:");
    h.update(zeta.to_bytes());
    hex::encode(&h.finalize()[..16])
}

fn guest_id(token: &RetrievalToken) -> String {
    let mut h = Sha256::new();
    h.update(b"elpasso/guest:");
    h.update(token.to_bytes());
    format!("guest-{}", hex::encode(&h.finalize()[..12]))
}

#[derive(Debug, Default)]
pub struct AccountTable {
    accounts: HashMap<String, AccountRecord>,
    by_zeta: HashMap<Vec<u8>, String>,
    blocklist: HashSet<Vec<u8>>,
}

impl AccountTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a table from persisted records and blocklist entries.
    pub fn restore(
        records: impl IntoIterator<Item = AccountRecord>,
        blocklist: impl IntoIterator<Item = G1>,
    ) -> Self {
        let mut t = Self::default();
        for r in records {
            t.insert(r);
        }
        t.blocklist = blocklist.into_iter().map(|z| z.to_bytes()).collect();
        t
    }

    fn insert(&mut self, r: AccountRecord) {
        if let Some(z) = &r.zeta {
            self.by_zeta.insert(z.to_bytes(), r.id.clone());
        }
        self.accounts.insert(r.id.clone(), r);
    }

    pub fn get(&self, id: &str) -> Option<&AccountRecord> {
        self.accounts.get(id)
    }

    pub fn by_zeta(&self, zeta: &G1) -> Option<&AccountRecord> {
        self.by_zeta
            .get(&zeta.to_bytes())
            .and_then(|id| self.accounts.get(id))
    }

    pub fn is_blocklisted(&self, zeta: &G1) -> bool {
        self.blocklist.contains(&zeta.to_bytes())
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &AccountRecord> {
        self.accounts.values()
    }

    /// Resolves a verified sign-on against the stored accounts.
    pub fn apply(&mut self, v: &VerifiedSignOn, policy: &SignOnPolicy, now: u64) -> SignOnResult {
        let Some(zeta) = v.zeta else {
            return match v.token {
                Some(t) => {
                    let id = guest_id(&t);
                    self.insert(AccountRecord {
                        id: id.clone(),
                        zeta: None,
                        devices: vec![],
                        token: Some(t),
                        disclosed: v.disclosed.clone(),
                        created: now,
                        last_seen: now,
                        pending: None,
                    });
                    SignOnResult::accept(AccountAction::Guest, Some(id))
                }
                None => SignOnResult::accept(AccountAction::Guest, None),
            };
        };
        if self.is_blocklisted(&zeta) {
            return SignOnResult::reject(RejectReason::Blocklisted);
        }
        let Some(id) = self.by_zeta.get(&zeta.to_bytes()).cloned() else {
            let id = account_id(&zeta);
            self.insert(AccountRecord {
                id: id.clone(),
                zeta: Some(zeta),
                devices: v.zeta_device.into_iter().collect(),
                token: v.token,
                disclosed: v.disclosed.clone(),
                created: now,
                last_seen: now,
                pending: None,
            });
            return SignOnResult::accept(AccountAction::Created, Some(id));
        };
        let rec = self.accounts.get_mut(&id).expect("index consistent");
        let mut action = AccountAction::Matched;
        if let Some(zd) = v.zeta_device {
            if !rec.devices.contains(&zd) {
                rec.devices.push(zd);
                action = AccountAction::DeviceEnrolled;
            }
        }
        if policy.require_2fa {
            let zd = v.zeta_device.expect("policy checked");
            let live = rec
                .pending
                .take()
                .filter(|p| now <= p.at + policy.second_factor_window);
            match live {
                Some(p) if p.device != zd => {}
                Some(p) => {
                    rec.pending = Some(p);
                    let mut r = SignOnResult::reject(RejectReason::PolicyUnmet);
                    r.account_id = Some(id);
                    return r;
                }
                None => {
                    rec.pending = Some(PendingFactor {
                        device: zd,
                        at: now,
                    });
                    let mut r = SignOnResult::reject(RejectReason::SecondFactorRequired);
                    r.account_id = Some(id);
                    return r;
                }
            }
        }
        if v.token.is_some() {
            rec.token = v.token;
        }
        rec.disclosed = v.disclosed.clone();
        rec.last_seen = now;
        SignOnResult::accept(action, Some(id))
    }

    /// Moves the account of `old.zeta` to `new.zeta` and blocklists the old pseudonym.
    pub fn apply_rotation(
        &mut self,
        old: &VerifiedSignOn,
        new: &VerifiedSignOn,
        now: u64,
    ) -> SignOnResult {
        let (Some(old_z), Some(new_z)) = (old.zeta, new.zeta) else {
            return SignOnResult::reject(RejectReason::Malformed);
        };
        if self.is_blocklisted(&old_z) {
            return SignOnResult::reject(RejectReason::Blocklisted);
        }
        if self.is_blocklisted(&new_z) || self.by_zeta.contains_key(&new_z.to_bytes()) {
            return SignOnResult::reject(RejectReason::AccountExists);
        }
        let Some(id) = self.by_zeta.remove(&old_z.to_bytes()) else {
            return SignOnResult::reject(RejectReason::UnknownAccount);
        };
        self.blocklist.insert(old_z.to_bytes());
        self.by_zeta.insert(new_z.to_bytes(), id.clone());
        let rec = self.accounts.get_mut(&id).expect("index consistent");
        rec.zeta = Some(new_z);
        rec.devices = new.zeta_device.into_iter().collect();
        rec.pending = None;
        if new.token.is_some() {
            rec.token = new.token;
        }
        rec.last_seen = now;
        SignOnResult::accept(AccountAction::Rotated, Some(id))
    }
}

/// Proof, expiry and policy checks for a sign-on; touches no RP state.
pub fn check_signon(
    params: &PublicParams,
    pk: &IdpPublicKey,
    req: &SignOnRequest,
    domain: &str,
    authority_key: Option<&G1>,
    now: u64,
    policy: &SignOnPolicy,
) -> Result<VerifiedSignOn, RejectReason> {
    if req.flags.purpose != Purpose::SignOn {
        return Err(RejectReason::Malformed);
    }
    let v = verify_signon(
        params,
        pk,
        req,
        domain,
        authority_key,
        now,
        ExpiryRule::MustBeValid,
    )?;
    policy.check(&v)?;
    Ok(v)
}

/// As [`check_signon`] for a rotation: old credential expired, new one current, one shared nonce.
pub fn check_rotation(
    params: &PublicParams,
    pk: &IdpPublicKey,
    req: &RotationRequest,
    domain: &str,
    authority_key: Option<&G1>,
    now: u64,
    policy: &SignOnPolicy,
) -> Result<(VerifiedSignOn, VerifiedSignOn), RejectReason> {
    let (o, n) = (&req.old, &req.new);
    if o.flags.purpose != Purpose::RotateOld
        || n.flags.purpose != Purpose::RotateNew
        || o.nonce != n.nonce
        || o.issuer != n.issuer
        || o.zeta.is_none()
        || n.zeta.is_none()
    {
        return Err(RejectReason::Malformed);
    }
    let ov = verify_signon(
        params,
        pk,
        o,
        domain,
        authority_key,
        now,
        ExpiryRule::MustBeExpired,
    )?;
    let nv = verify_signon(
        params,
        pk,
        n,
        domain,
        authority_key,
        now,
        ExpiryRule::MustBeValid,
    )?;
    if policy.require_retrieval && nv.token.is_none() {
        return Err(RejectReason::PolicyUnmet);
    }
    Ok((ov, nv))
}

/// Full RP-side sign-on: checks, then nonce consumption, then account resolution.
/// `pk` is `None` when the issuer is not trusted.
#[allow(clippy::too_many_arguments)]
pub fn verify_id(
    params: &PublicParams,
    pk: Option<&IdpPublicKey>,
    req: &SignOnRequest,
    domain: &str,
    authority_key: Option<&G1>,
    now: u64,
    nonces: &mut NonceCache,
    accounts: &mut AccountTable,
    policy: &SignOnPolicy,
) -> SignOnResult {
    let Some(pk) = pk else {
        return SignOnResult::reject(RejectReason::UnknownIdp);
    };
    let v = match check_signon(params, pk, req, domain, authority_key, now, policy) {
        Ok(v) => v,
        Err(r) => return SignOnResult::reject(r),
    };
    if !nonces.consume(&req.nonce, now) {
        return SignOnResult::reject(RejectReason::Replay);
    }
    accounts.apply(&v, policy, now)
}

#[allow(clippy::too_many_arguments)]
pub fn verify_rotation(
    params: &PublicParams,
    pk: Option<&IdpPublicKey>,
    req: &RotationRequest,
    domain: &str,
    authority_key: Option<&G1>,
    now: u64,
    nonces: &mut NonceCache,
    accounts: &mut AccountTable,
    policy: &SignOnPolicy,
) -> SignOnResult {
    let Some(pk) = pk else {
        return SignOnResult::reject(RejectReason::UnknownIdp);
    };
    let (ov, nv) = match check_rotation(params, pk, req, domain, authority_key, now, policy) {
        Ok(v) => v,
        Err(r) => return SignOnResult::reject(r),
    };
    if !nonces.consume(&req.old.nonce, now) {
        return SignOnResult::reject(RejectReason::Replay);
    }
    accounts.apply_rotation(&ov, &nv, now)
}
