use std::collections::BTreeMap;

use group::Group;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::enroll::{enroll_approve, enroll_complete, enroll_init, fingerprint, EnrollComplete};
use super::*;
use crate::groups::{exp, hash_to_g1, retrieval_base, GroupElement, PublicParams, Scalar, G1};
use crate::pscred::{keygen, AttributeEncoding, AttributeValue, IdpKeyPair};
use crate::retrieval::{authority_keygen, combine, partial_decrypt, AuthorityKeySet};

const DAY: u64 = SECONDS_PER_DAY;
const T0: u64 = 20_000 * DAY + 3_600;
const RP: &str = "shop.example";

struct World {
    params: PublicParams,
    kp: IdpKeyPair,
    auth: AuthorityKeySet,
    rng: ChaCha20Rng,
}

impl World {
    fn new(info: &[(&str, AttributeEncoding)], device_slot: bool, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = PublicParams::setup(128).unwrap();
        let schema = sso_schema(info, device_slot).unwrap();
        let kp = keygen(&params, schema, &mut rng);
        let auth = authority_keygen(&params, 3, 2, &mut rng).unwrap();
        Self {
            params,
            kp,
            auth,
            rng,
        }
    }

    fn user(&mut self, login: &str, info: &[(&str, AttributeValue)]) -> UserRecord {
        let info = info
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        let mut u = UserRecord::new(login, info, &mut self.rng);
        u.devices.insert("laptop".into(), DeviceEntry::default());
        u
    }

    fn issue(
        &mut self,
        user: &UserRecord,
        secrets: &UserSecrets,
        info: &[&str],
        now: u64,
    ) -> CredentialBundle {
        let labels: Vec<String> = info.iter().map(|s| s.to_string()).collect();
        let two_fa = SsoLayout::of(&self.kp.pk.schema).unwrap().device_slot;
        let (d, req) = request_id(&self.kp.pk, secrets, &labels, two_fa, &mut self.rng).unwrap();
        let blinded = provide_id(
            &self.kp,
            user,
            "laptop",
            &req,
            now,
            &IssuancePolicy::default(),
            &mut self.rng,
        )
        .unwrap();
        unblind_id(&self.kp.pk, "idp.example", &d, secrets, &blinded).unwrap()
    }

    fn session(&self, nonce: Vec<u8>) -> RpSession {
        RpSession {
            domain: RP.into(),
            nonce,
            authority_key: Some(self.auth.public.y),
        }
    }

    fn retrieval() -> SignOnFlags {
        SignOnFlags {
            retrieval: true,
            ..SignOnFlags::default()
        }
    }
}

struct Rp {
    nonces: NonceCache,
    accounts: AccountTable,
    policy: SignOnPolicy,
}

impl Rp {
    fn new(policy: SignOnPolicy) -> Self {
        Self {
            nonces: NonceCache::new(600),
            accounts: AccountTable::new(),
            policy,
        }
    }

    fn verify(&mut self, w: &World, req: &SignOnRequest, now: u64) -> SignOnResult {
        verify_id(
            &w.params,
            Some(&w.kp.pk),
            req,
            RP,
            Some(&w.auth.public.y),
            now,
            &mut self.nonces,
            &mut self.accounts,
            &self.policy,
        )
    }
}

fn sign_on(
    w: &mut World,
    rp: &mut Rp,
    bundle: &CredentialBundle,
    secrets: &UserSecrets,
    flags: SignOnFlags,
    now: u64,
) -> (SignOnRequest, SignOnResult) {
    let nonce = rp.nonces.issue(now, &mut w.rng);
    let session = w.session(nonce);
    let req = prove_id(
        &w.params,
        &w.kp.pk,
        bundle,
        secrets,
        &session,
        &[],
        flags,
        now,
        &mut w.rng,
    )
    .unwrap();
    let res = rp.verify(w, &req, now);
    (req, res)
}

#[test]
fn minimal_and_two_factor_schemas() {
    assert_eq!(sso_schema(&[], false).unwrap().len(), 3);
    assert_eq!(sso_schema(&[], true).unwrap().len(), 4);
    let mut w = World::new(&[], false, 1);
    let secrets = UserSecrets::generate(&mut w.rng);
    let (_, msg) = request_id(&w.kp.pk, &secrets, &[], false, &mut w.rng).unwrap();
    assert_eq!(msg.hidden, vec![SECRET]);
    assert_eq!(
        request_id(&w.kp.pk, &secrets, &[], true, &mut w.rng).err(),
        Some(ProtocolError::TwoFactorUnsupported)
    );
    assert_eq!(
        request_id(&w.kp.pk, &secrets, &["age".into()], false, &mut w.rng).err(),
        Some(ProtocolError::UnknownInfo("age".into()))
    );

    let mut w = World::new(&[], true, 2);
    let (_, msg) = request_id(&w.kp.pk, &secrets, &[], true, &mut w.rng).unwrap();
    assert_eq!(msg.hidden, vec![SECRET, DEVICE_SECRET]);
}

#[test]
fn thirteen_attribute_request_round_trips() {
    let info: Vec<(String, AttributeEncoding)> = (0..9)
        .map(|i| (format!("info{i}"), AttributeEncoding::Integer))
        .collect();
    let info_ref: Vec<(&str, AttributeEncoding)> =
        info.iter().map(|(l, e)| (l.as_str(), *e)).collect();
    let mut w = World::new(&info_ref, true, 3);
    assert_eq!(w.kp.pk.schema.len(), 13);
    let values: Vec<(&str, AttributeValue)> = info_ref
        .iter()
        .enumerate()
        .map(|(i, (l, _))| (*l, AttributeValue::Integer(i as u64 * 7)))
        .collect();
    let user = w.user("carol", &values);
    let secrets = UserSecrets::generate(&mut w.rng);
    let labels: Vec<String> = info.iter().map(|(l, _)| l.clone()).collect();
    let (d, msg) = request_id(&w.kp.pk, &secrets, &labels, true, &mut w.rng).unwrap();
    let msg = RequestIdMsg::from_bytes(&msg.to_bytes()).unwrap();
    let json = serde_json::to_string(&msg).unwrap();
    let msg: RequestIdMsg = serde_json::from_str(&json).unwrap();
    let blinded = provide_id(
        &w.kp,
        &user,
        "laptop",
        &msg,
        T0,
        &IssuancePolicy::default(),
        &mut w.rng,
    )
    .unwrap();
    let blinded = BlindedCredentialMsg::from_bytes(&blinded.to_bytes()).unwrap();
    let bundle = unblind_id(&w.kp.pk, "idp.example", &d, &secrets, &blinded).unwrap();
    assert_eq!(bundle.info.len(), 9);
}

#[test]
fn issuance_rules() {
    let mut w = World::new(&[("age", AttributeEncoding::Integer)], false, 4);
    let mut user = w.user("alice", &[("age", AttributeValue::Integer(30))]);
    let secrets = UserSecrets::generate(&mut w.rng);

    // Any time within day D gives the same tp.
    let start = 20_000 * DAY;
    let a = w.issue(&user, &secrets, &[], start);
    let b = w.issue(&user, &secrets, &[], start + DAY - 1);
    assert_eq!(a.tp, b.tp);
    assert_eq!(a.tp, 20_007);

    // γ in the credential matches the stored h^γ.
    assert_eq!(exp(&retrieval_base(), &a.gamma), user.h_gamma);
    let attrs = a.attributes(&w.kp.pk, &secrets).unwrap();
    assert!(a.credential().verify(&w.kp.pk, &attrs));

    let (_, msg) = request_id(&w.kp.pk, &secrets, &[], false, &mut w.rng).unwrap();
    user.devices.get_mut("laptop").unwrap().revoked = true;
    let policy = IssuancePolicy::default();
    assert_eq!(
        provide_id(&w.kp, &user, "laptop", &msg, T0, &policy, &mut w.rng).err(),
        Some(ProtocolError::RevokedDevice("laptop".into()))
    );
    assert!(matches!(
        provide_id(&w.kp, &user, "phone", &msg, T0, &policy, &mut w.rng),
        Err(ProtocolError::UnknownDevice(_))
    ));
    user.devices.get_mut("laptop").unwrap().revoked = false;

    let mut tampered = msg.clone();
    tampered.commitment += G1::generator();
    assert_eq!(
        provide_id(&w.kp, &user, "laptop", &tampered, T0, &policy, &mut w.rng).err(),
        Some(ProtocolError::BadProof)
    );

    let bob = w.user("bob", &[]);
    let (_, msg) = request_id(&w.kp.pk, &secrets, &["age".into()], false, &mut w.rng).unwrap();
    assert_eq!(
        provide_id(&w.kp, &bob, "laptop", &msg, T0, &policy, &mut w.rng).err(),
        Some(ProtocolError::UnverifiedInfo("age".into()))
    );
}

#[test]
fn pseudonym_derivation() {
    let s = Scalar::from(123_456u64);
    assert_eq!(derive_pseudonym(&s, "a.com"), derive_pseudonym(&s, "a.com"));
    assert_ne!(derive_pseudonym(&s, "a.com"), derive_pseudonym(&s, "b.com"));
    assert_eq!(
        derive_pseudonym(&s, "a.com"),
        exp(&hash_to_g1(b"a.com"), &s)
    );
}

#[test]
fn sign_on_created_then_matched_and_replay_rejected() {
    let mut w = World::new(&[], false, 5);
    let user = w.user("alice", &[]);
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &[], T0);
    let mut rp = Rp::new(SignOnPolicy {
        require_retrieval: true,
        ..SignOnPolicy::default()
    });

    let (req, first) = sign_on(&mut w, &mut rp, &bundle, &secrets, World::retrieval(), T0);
    assert!(first.accepted, "{first:?}");
    assert_eq!(first.action, Some(AccountAction::Created));
    assert_eq!(rp.verify(&w, &req, T0).reason, Some(RejectReason::Replay));

    let (_, second) = sign_on(
        &mut w,
        &mut rp,
        &bundle,
        &secrets,
        World::retrieval(),
        T0 + 60,
    );
    assert_eq!(second.action, Some(AccountAction::Matched));
    assert_eq!(second.account_id, first.account_id);

    // Policy requires E.
    let (_, no_e) = sign_on(
        &mut w,
        &mut rp,
        &bundle,
        &secrets,
        SignOnFlags::default(),
        T0,
    );
    assert_eq!(no_e.reason, Some(RejectReason::PolicyUnmet));

    // Stored E decrypts to the user's h^γ.
    let stored = rp
        .accounts
        .get(first.account_id.as_ref().unwrap())
        .unwrap()
        .token
        .unwrap();
    let partials: Vec<_> = w.auth.shares[1..]
        .iter()
        .map(|s| partial_decrypt(&w.params, s, &stored, &mut w.rng))
        .collect();
    assert_eq!(
        combine(&w.params, &w.auth.public, &stored, &partials).unwrap(),
        user.h_gamma
    );
}

#[test]
fn expiry_is_enforced_both_sides() {
    let mut w = World::new(&[], false, 6);
    let user = w.user("alice", &[]);
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &[], T0);
    let mut rp = Rp::new(SignOnPolicy::default());
    let last_ok = (bundle.tp + 1) * DAY - 1;
    let nonce = rp.nonces.issue(last_ok, &mut w.rng);
    let req = prove_id(
        &w.params,
        &w.kp.pk,
        &bundle,
        &secrets,
        &w.session(nonce),
        &[],
        SignOnFlags::default(),
        last_ok,
        &mut w.rng,
    )
    .unwrap();
    assert_eq!(
        rp.verify(&w, &req, last_ok + 1).reason,
        Some(RejectReason::Expired)
    );
    assert!(rp.verify(&w, &req, last_ok).accepted);

    let later = last_ok + 1;
    assert_eq!(
        prove_id(
            &w.params,
            &w.kp.pk,
            &bundle,
            &secrets,
            &w.session(vec![0; 16]),
            &[],
            SignOnFlags::default(),
            later,
            &mut w.rng,
        )
        .err(),
        Some(ProtocolError::Expired(bundle.tp))
    );
}

#[test]
fn guest_and_no_retrieval_variants() {
    let mut w = World::new(&[], false, 7);
    let user = w.user("alice", &[]);
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &[], T0);
    let mut rp = Rp::new(SignOnPolicy::default());

    let guest = SignOnFlags {
        guest: true,
        retrieval: true,
        ..SignOnFlags::default()
    };
    let (req, res) = sign_on(&mut w, &mut rp, &bundle, &secrets, guest, T0);
    assert!(req.zeta.is_none() && req.token.is_some());
    assert!(res.accepted);
    assert_eq!(res.action, Some(AccountAction::Guest));
    assert!(res.account_id.unwrap().starts_with("guest-"));

    let (req, res) = sign_on(
        &mut w,
        &mut rp,
        &bundle,
        &secrets,
        SignOnFlags::default(),
        T0,
    );
    assert!(req.token.is_none() && req.zeta.is_some());
    assert!(res.accepted);

    let mut strict = Rp::new(SignOnPolicy {
        allow_guest: false,
        ..SignOnPolicy::default()
    });
    let (_, res) = sign_on(&mut w, &mut strict, &bundle, &secrets, guest, T0);
    assert_eq!(res.reason, Some(RejectReason::PolicyUnmet));
}

#[test]
fn payload_fits_budget() {
    let mut w = World::new(&[], false, 8);
    let user = w.user("alice", &[]);
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &[], T0);
    let session = w.session(vec![7; NONCE_LEN]);
    let req = prove_id(
        &w.params,
        &w.kp.pk,
        &bundle,
        &secrets,
        &session,
        &[],
        World::retrieval(),
        T0,
        &mut w.rng,
    )
    .unwrap();
    let bytes = req.to_bytes();
    assert!(bytes.len() <= 1024, "{} bytes", bytes.len());
    assert_eq!(SignOnRequest::from_bytes(&bytes).unwrap(), req);
    let json = serde_json::to_string(&req).unwrap();
    assert_eq!(serde_json::from_str::<SignOnRequest>(&json).unwrap(), req);

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(SignOnRequest::from_bytes(&trailing).is_err());
}

#[test]
fn disclosure_rules() {
    let mut w = World::new(
        &[
            ("age", AttributeEncoding::Integer),
            ("country", AttributeEncoding::Text),
        ],
        false,
        9,
    );
    let user = w.user(
        "alice",
        &[
            ("age", AttributeValue::Integer(30)),
            ("country", AttributeValue::Text("NL".into())),
        ],
    );
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &["age"], T0);
    let mut rp = Rp::new(SignOnPolicy::default());
    let nonce = rp.nonces.issue(T0, &mut w.rng);
    let session = w.session(nonce);
    let prove = |w: &mut World, d: &[Disclosure]| {
        prove_id(
            &w.params,
            &w.kp.pk,
            &bundle,
            &secrets,
            &session,
            d,
            SignOnFlags::default(),
            T0,
            &mut w.rng,
        )
    };

    let req = prove(&mut w, &[Disclosure::parse("age").unwrap()]).unwrap();
    assert_eq!(req.disclosed["age"], AttributeValue::Integer(30));
    assert!(rp.verify(&w, &req, T0).accepted);

    assert_eq!(
        prove(&mut w, &[Disclosure::Reveal("country".into())]).err(),
        Some(ProtocolError::AbsentInfo("country".into()))
    );
    assert_eq!(
        prove(&mut w, &[Disclosure::Reveal("gamma".into())]).err(),
        Some(ProtocolError::ForbiddenDisclosure("gamma".into()))
    );
    assert_eq!(
        prove(&mut w, &[Disclosure::Reveal("s".into())]).err(),
        Some(ProtocolError::ForbiddenDisclosure("s".into()))
    );
    assert_eq!(
        prove(&mut w, &[Disclosure::parse("age=31").unwrap()]).err(),
        Some(ProtocolError::PredicateFalse("age".into()))
    );
    assert!(prove(&mut w, &[Disclosure::parse("age=30").unwrap()]).is_ok());
    assert!(matches!(
        Disclosure::parse("age>18"),
        Err(ProtocolError::UnsupportedPredicate(_))
    ));
    assert!(matches!(
        Disclosure::parse("age>=18"),
        Err(ProtocolError::UnsupportedPredicate(_))
    ));

    // A disclosed value swapped after proving no longer verifies.
    let mut req = prove(&mut w, &[Disclosure::parse("age").unwrap()]).unwrap();
    req.nonce = rp.nonces.issue(T0, &mut w.rng);
    req.disclosed
        .insert("age".into(), AttributeValue::Integer(99));
    assert_eq!(rp.verify(&w, &req, T0).reason, Some(RejectReason::BadProof));
}

#[test]
fn unknown_issuer_and_wrong_domain() {
    let mut w = World::new(&[], false, 10);
    let user = w.user("alice", &[]);
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &[], T0);
    let mut rp = Rp::new(SignOnPolicy::default());
    let nonce = rp.nonces.issue(T0, &mut w.rng);
    let req = prove_id(
        &w.params,
        &w.kp.pk,
        &bundle,
        &secrets,
        &w.session(nonce),
        &[],
        SignOnFlags::default(),
        T0,
        &mut w.rng,
    )
    .unwrap();
    let res = verify_id(
        &w.params,
        None,
        &req,
        RP,
        None,
        T0,
        &mut rp.nonces,
        &mut rp.accounts,
        &rp.policy,
    );
    assert_eq!(res.reason, Some(RejectReason::UnknownIdp));
    let res = verify_id(
        &w.params,
        Some(&w.kp.pk),
        &req,
        "other.example",
        None,
        T0,
        &mut rp.nonces,
        &mut rp.accounts,
        &rp.policy,
    );
    assert_eq!(res.reason, Some(RejectReason::BadProof));
}

#[test]
fn unlinkable_across_domains() {
    let mut w = World::new(&[], false, 11);
    let user = w.user("alice", &[]);
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &[], T0);
    let public: Vec<Vec<u8>> = [
        w.params.g().to_bytes(),
        retrieval_base().to_bytes(),
        w.auth.public.y.to_bytes(),
    ]
    .into();
    for trial in 0..100u8 {
        let mut elems = Vec::new();
        for domain in ["a.com", "b.com"] {
            let session = RpSession {
                domain: domain.into(),
                nonce: vec![trial; NONCE_LEN],
                authority_key: Some(w.auth.public.y),
            };
            let r = prove_id(
                &w.params,
                &w.kp.pk,
                &bundle,
                &secrets,
                &session,
                &[],
                World::retrieval(),
                T0,
                &mut w.rng,
            )
            .unwrap();
            let mut set = vec![
                r.sigma1.to_bytes(),
                r.sigma2.to_bytes(),
                r.theta1.to_bytes(),
            ];
            set.extend(r.zeta.map(|z| z.to_bytes()));
            let t = r.token.unwrap();
            set.extend([t.c1.to_bytes(), t.c2.to_bytes()]);
            elems.push(set);
        }
        for e in &elems[0] {
            assert!(!elems[1].contains(e) || public.contains(e));
        }
    }
}

#[test]
fn two_factor_policy() {
    let mut w = World::new(&[], true, 12);
    let mut user = w.user("alice", &[]);
    user.devices.insert("phone".into(), DeviceEntry::default());
    let laptop = UserSecrets::generate(&mut w.rng);
    let phone = UserSecrets::for_new_device(*laptop.s(), &mut w.rng);
    let b_laptop = w.issue(&user, &laptop, &[], T0);
    let b_phone = w.issue(&user, &phone, &[], T0);
    let mut rp = Rp::new(SignOnPolicy {
        require_2fa: true,
        ..SignOnPolicy::default()
    });
    let flags = SignOnFlags {
        two_fa: true,
        ..SignOnFlags::default()
    };

    let (_, r) = sign_on(&mut w, &mut rp, &b_laptop, &laptop, flags, T0);
    assert_eq!(r.action, Some(AccountAction::Created));
    let (_, r) = sign_on(&mut w, &mut rp, &b_laptop, &laptop, flags, T0 + 1);
    assert_eq!(r.reason, Some(RejectReason::SecondFactorRequired));
    let (_, r) = sign_on(&mut w, &mut rp, &b_laptop, &laptop, flags, T0 + 2);
    assert_eq!(r.reason, Some(RejectReason::PolicyUnmet));
    let (_, r) = sign_on(&mut w, &mut rp, &b_phone, &phone, flags, T0 + 3);
    assert!(r.accepted, "{r:?}");
    assert_eq!(r.action, Some(AccountAction::DeviceEnrolled));
    let rec = rp.accounts.get(r.account_id.as_ref().unwrap()).unwrap();
    assert_eq!(rec.devices.len(), 2);

    let (_, r) = sign_on(
        &mut w,
        &mut rp,
        &b_laptop,
        &laptop,
        SignOnFlags::default(),
        T0 + 4,
    );
    assert_eq!(r.reason, Some(RejectReason::PolicyUnmet));
}

#[test]
fn device_enrollment() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let old = UserSecrets::generate(&mut rng);
    let (eph, init) = enroll_init("phone", &mut rng);
    let shown = fingerprint(&init.device_pk, "4711");
    let approve = enroll_approve(&old, &init, "4711", &shown, &mut rng).unwrap();
    let relayed = EnrollComplete::from(
        &super::enroll::EnrollApprove::from_bytes(&approve.to_bytes()).unwrap(),
    );
    assert_eq!(relayed.ciphertext, approve.ciphertext);
    let new = enroll_complete(&eph, &relayed, "4711", &mut rng).unwrap();
    assert_eq!(derive_pseudonym(new.s(), RP), derive_pseudonym(old.s(), RP));
    assert_ne!(
        derive_pseudonym(new.s_d(), RP),
        derive_pseudonym(old.s_d(), RP)
    );

    // Salt typed differently on the old device.
    assert_eq!(
        enroll_approve(&old, &init, "4712", &shown, &mut rng).err(),
        Some(ProtocolError::FingerprintMismatch)
    );

    // IdP swaps in its own key: the fingerprint check catches it ...
    let (_, evil) = enroll_init("phone", &mut rng);
    assert_eq!(
        enroll_approve(&old, &evil, "4711", &shown, &mut rng).err(),
        Some(ProtocolError::FingerprintMismatch)
    );
    // ... and a ciphertext sealed to the substituted key does not open on the new device.
    let evil_fp = fingerprint(&evil.device_pk, "4711");
    let sealed = enroll_approve(&old, &evil, "4711", &evil_fp, &mut rng).unwrap();
    assert_eq!(
        enroll_complete(&eph, &EnrollComplete::from(&sealed), "4711", &mut rng).err(),
        Some(ProtocolError::EnrollmentDecrypt)
    );
    // Tampered relay.
    let mut bad = relayed.clone();
    bad.ciphertext[0] ^= 1;
    assert_eq!(
        enroll_complete(&eph, &bad, "4711", &mut rng).err(),
        Some(ProtocolError::EnrollmentDecrypt)
    );
    assert_eq!(
        enroll_complete(&eph, &relayed, "4712", &mut rng).err(),
        Some(ProtocolError::EnrollmentDecrypt)
    );

    let restored =
        super::enroll::EnrollEphemeral::from_secret_bytes(&eph.to_secret_bytes()).unwrap();
    assert!(enroll_complete(&restored, &relayed, "4711", &mut rng).is_ok());
}

#[test]
fn rotation() {
    let mut w = World::new(&[], false, 14);
    let user = w.user("alice", &[]);
    let old = UserSecrets::generate(&mut w.rng);
    let old_bundle = w.issue(&user, &old, &[], T0);
    let mut rp = Rp::new(SignOnPolicy::default());
    let (_, created) = sign_on(
        &mut w,
        &mut rp,
        &old_bundle,
        &old,
        SignOnFlags::default(),
        T0,
    );
    let id = created.account_id.unwrap();

    let new = UserSecrets::generate(&mut w.rng);
    let after = (old_bundle.tp + 1) * DAY + 10;
    let new_bundle = w.issue(&user, &new, &[], after);
    let rotate = |w: &mut World, rp: &mut Rp, now: u64| {
        let nonce = rp.nonces.issue(now, &mut w.rng);
        let session = w.session(nonce);
        let req = rotate_secret(
            &w.params,
            &w.kp.pk,
            (&old_bundle, &old),
            (&new_bundle, &new),
            &session,
            now,
            &mut w.rng,
        )
        .unwrap();
        let req = RotationRequest::from_bytes(&req.to_bytes()).unwrap();
        verify_rotation(
            &w.params,
            Some(&w.kp.pk),
            &req,
            RP,
            Some(&w.auth.public.y),
            now,
            &mut rp.nonces,
            &mut rp.accounts,
            &rp.policy,
        )
    };

    // Old credential still valid: refused.
    assert_eq!(
        rotate(&mut w, &mut rp, T0).reason,
        Some(RejectReason::NotExpired)
    );

    // ζ never seen at this RP.
    let mut fresh = Rp::new(SignOnPolicy::default());
    assert_eq!(
        rotate(&mut w, &mut fresh, after).reason,
        Some(RejectReason::UnknownAccount)
    );

    let r = rotate(&mut w, &mut rp, after);
    assert_eq!(r.action, Some(AccountAction::Rotated));
    assert_eq!(r.account_id.as_deref(), Some(id.as_str()));

    let (_, r) = sign_on(
        &mut w,
        &mut rp,
        &new_bundle,
        &new,
        SignOnFlags::default(),
        after,
    );
    assert_eq!(r.action, Some(AccountAction::Matched));
    assert_eq!(r.account_id.as_deref(), Some(id.as_str()));

    // A fresh credential on s is refused after rotation.
    let reissued = w.issue(&user, &old, &[], after);
    let (_, r) = sign_on(
        &mut w,
        &mut rp,
        &reissued,
        &old,
        SignOnFlags::default(),
        after,
    );
    assert_eq!(r.reason, Some(RejectReason::Blocklisted));
}

#[test]
fn sybil_resistance_and_expiry_monotonicity() {
    let mut w = World::new(&[], false, 15);
    let user = w.user("alice", &[]);
    let secrets = UserSecrets::generate(&mut w.rng);
    let bundle = w.issue(&user, &secrets, &[], T0);
    let mut rp = Rp::new(SignOnPolicy::default());
    let mut ids = std::collections::BTreeSet::new();
    for i in 0..20 {
        let (_, r) = sign_on(
            &mut w,
            &mut rp,
            &bundle,
            &secrets,
            SignOnFlags::default(),
            T0 + i,
        );
        assert!(r.accepted);
        ids.insert(r.account_id.unwrap());
    }
    assert_eq!(ids.len(), 1);
    assert_eq!(rp.accounts.len(), 1);

    let nonces: Vec<_> = (0..3).map(|_| rp.nonces.issue(T0, &mut w.rng)).collect();
    let reqs: Vec<_> = nonces
        .into_iter()
        .map(|n| {
            prove_id(
                &w.params,
                &w.kp.pk,
                &bundle,
                &secrets,
                &w.session(n),
                &[],
                SignOnFlags::default(),
                T0,
                &mut w.rng,
            )
            .unwrap()
        })
        .collect();
    let expire = (bundle.tp + 1) * DAY;
    for (k, req) in reqs.iter().enumerate() {
        let v = verify_signon(
            &w.params,
            &w.kp.pk,
            req,
            RP,
            None,
            expire + k as u64 * DAY,
            ExpiryRule::MustBeValid,
        );
        assert_eq!(v.err(), Some(RejectReason::Expired));
    }
}

#[test]
fn nonce_cache_lifecycle() {
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    let mut c = NonceCache::new(60);
    let a = c.issue(0, &mut rng);
    let b = c.issue(0, &mut rng);
    assert_ne!(a, b);
    assert!(c.consume(&a, 10));
    assert!(!c.consume(&a, 10));
    assert!(!c.consume(&b, 61));
    let stale = c.issue(0, &mut rng);
    c.issue(121, &mut rng);
    assert_eq!(c.len(), 1);
    assert!(!c.consume(&stale, 1));
    assert!(!c.consume(&[1, 2, 3], 1));
}

#[test]
fn message_round_trips() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let r = SignOnResult::accept(AccountAction::DeviceEnrolled, Some("abc".into()));
    assert_eq!(SignOnResult::from_bytes(&r.to_bytes()).unwrap(), r);
    let r = SignOnResult::reject(RejectReason::Replay);
    assert_eq!(SignOnResult::from_bytes(&r.to_bytes()).unwrap(), r);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["reason"], "replay");

    let params = PublicParams::setup(128).unwrap();
    let auth = authority_keygen(&params, 3, 2, &mut rng).unwrap();
    let (_, token) = crate::retrieval::encrypt(
        &params,
        &auth.public.y,
        &retrieval_base(),
        &Scalar::from(5u64),
        &mut rng,
    );
    let report = RetrievalReport {
        case_id: "case-1".into(),
        domain: RP.into(),
        account_id: "acct".into(),
        token,
        partials: vec![partial_decrypt(&params, &auth.shares[0], &token, &mut rng)],
    };
    assert_eq!(
        RetrievalReport::from_bytes(&report.to_bytes()).unwrap(),
        report
    );
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(
        serde_json::from_str::<RetrievalReport>(&json).unwrap(),
        report
    );

    for b in 0..=255u8 {
        if let Ok(f) = SignOnFlags::from_byte(b) {
            assert_eq!(f.to_byte(), b);
        }
    }

    let secrets = UserSecrets::generate(&mut rng);
    assert_eq!(
        UserSecrets::from_secret_bytes(&secrets.to_secret_bytes()).unwrap(),
        secrets
    );
    assert_eq!(format!("{secrets:?}"), "UserSecrets { .. }");
    let mut u = UserRecord::new("x", BTreeMap::new(), &mut rng);
    assert!(u.is_consistent());
    u.h_gamma += G1::generator();
    assert!(!u.is_consistent());
}

#[test]
fn manual_clock() {
    let c = ManualClock::new(5);
    c.advance(10);
    assert_eq!(c.now(), 15);
    c.set(1);
    assert_eq!(c.now(), 1);
    assert!(SystemClock.now() > 1_600_000_000);
}
