//! In-process IdP, authorities and RP state for measurements without a network.

use std::collections::BTreeMap;

use elpasso_core::groups::PublicParams;
use elpasso_core::protocol::{
    provide_id, request_id, sso_schema, unblind_id, verify_id, AccountTable, BlindedCredentialMsg,
    CredentialBundle, DeviceEntry, Disclosure, IssuancePolicy, NonceCache, RequestIdMsg, RpSession,
    SignOnPolicy, SignOnRequest, SignOnResult, UserRecord, UserSecrets,
};
use elpasso_core::pscred::{keygen, AttributeEncoding, AttributeValue, IdpKeyPair};
use elpasso_core::retrieval::{authority_keygen, AuthorityKeySet};
use elpasso_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const ISSUER: &str = "idp.bench";
pub const DOMAIN: &str = "rp.bench";
pub const DEVICE: &str = "bench-device";

/// Integer info labels `a00, a01, …`.
pub fn info_labels(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("a{i:02}")).collect()
}

pub struct Fixture {
    pub params: PublicParams,
    pub kp: IdpKeyPair,
    pub authorities: AuthorityKeySet,
    pub labels: Vec<String>,
    pub two_fa: bool,
    pub rng: ChaCha20Rng,
    pub nonces: NonceCache,
    pub accounts: AccountTable,
    pub policy: SignOnPolicy,
}

impl Fixture {
    /// Schema of `3 + two_fa + info` attributes; 2-of-3 authorities.
    pub fn new(info: usize, two_fa: bool, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = PublicParams::setup(128).expect("supported level");
        let labels = info_labels(info);
        let spec: Vec<(&str, AttributeEncoding)> = labels
            .iter()
            .map(|l| (l.as_str(), AttributeEncoding::Integer))
            .collect();
        let kp = keygen(
            &params,
            sso_schema(&spec, two_fa).expect("valid schema"),
            &mut rng,
        );
        let authorities = authority_keygen(&params, 3, 2, &mut rng).expect("valid threshold");
        Self {
            params,
            kp,
            authorities,
            labels,
            two_fa,
            rng,
            nonces: NonceCache::new(3_600),
            accounts: AccountTable::new(),
            policy: SignOnPolicy::default(),
        }
    }

    pub fn attributes(&self) -> usize {
        self.kp.pk.schema.len()
    }

    /// IdP record with random values for every info label.
    pub fn user(&mut self, login: &str) -> UserRecord {
        let info: BTreeMap<String, AttributeValue> = self
            .labels
            .iter()
            .map(|l| {
                (
                    l.clone(),
                    AttributeValue::Integer(self.rng.gen_range(0..1_000_000)),
                )
            })
            .collect();
        let mut u = UserRecord::new(login, info, &mut self.rng);
        u.devices.insert(DEVICE.into(), DeviceEntry::default());
        u
    }

    pub fn secrets(&mut self) -> UserSecrets {
        UserSecrets::generate(&mut self.rng)
    }

    pub fn request(&mut self, secrets: &UserSecrets) -> (Scalar, RequestIdMsg) {
        request_id(
            &self.kp.pk,
            secrets,
            &self.labels,
            self.two_fa,
            &mut self.rng,
        )
        .expect("fixture request is valid")
    }

    pub fn provide(
        &mut self,
        user: &UserRecord,
        msg: &RequestIdMsg,
        now: u64,
    ) -> BlindedCredentialMsg {
        provide_id(
            &self.kp,
            user,
            DEVICE,
            msg,
            now,
            &IssuancePolicy::default(),
            &mut self.rng,
        )
        .expect("fixture issuance succeeds")
    }

    pub fn unblind(
        &self,
        d: &Scalar,
        secrets: &UserSecrets,
        msg: &BlindedCredentialMsg,
    ) -> CredentialBundle {
        unblind_id(&self.kp.pk, ISSUER, d, secrets, msg).expect("fixture credential verifies")
    }

    /// Setup phase end to end.
    pub fn issue(
        &mut self,
        user: &UserRecord,
        secrets: &UserSecrets,
        now: u64,
    ) -> CredentialBundle {
        let (d, msg) = self.request(secrets);
        let blinded = self.provide(user, &msg, now);
        self.unblind(&d, secrets, &blinded)
    }

    /// Fresh RP session with the authority key announced.
    pub fn session(&mut self, now: u64) -> RpSession {
        RpSession {
            domain: DOMAIN.into(),
            nonce: self.nonces.issue(now, &mut self.rng),
            authority_key: Some(self.authorities.public.y),
        }
    }

    /// Discloses the first `count` info labels.
    pub fn disclosures(&self, count: usize) -> Vec<Disclosure> {
        self.labels
            .iter()
            .take(count)
            .map(|l| Disclosure::Reveal(l.clone()))
            .collect()
    }

    pub fn verify(&mut self, req: &SignOnRequest, now: u64) -> SignOnResult {
        verify_id(
            &self.params,
            Some(&self.kp.pk),
            req,
            DOMAIN,
            Some(&self.authorities.public.y),
            now,
            &mut self.nonces,
            &mut self.accounts,
            &self.policy,
        )
    }
}
