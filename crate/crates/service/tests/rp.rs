mod common;

use std::sync::Arc;

use axum::routing::get;
use axum::Router;
use common::{add_alice, issue, local, sign_on};
use elpasso_core::groups::{exp, hash_to_g1, retrieval_base, scalar_to_bytes};
use elpasso_core::protocol::{
    AccountAction, Clock, RejectReason, RetrievalReport, SignOnPolicy, SECONDS_PER_DAY,
};
use elpasso_core::wire::Envelope;
use elpasso_core::IdpPublicKey;
use elpasso_service::flows::{self, SignOnOptions};
use elpasso_service::local::LocalOptions;
use elpasso_service::{spawn, Client};
use rand::rngs::OsRng;

#[test]
fn created_then_matched_and_replay_rejected() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &["age", "country"]);
    let (req, first) = sign_on(&l, &u, &["age"], SignOnOptions::default());
    assert!(first.accepted, "{first:?}");
    assert_eq!(first.action, Some(AccountAction::Created));
    let (_, second) = sign_on(&l, &u, &["country=CH"], SignOnOptions::default());
    assert_eq!(second.action, Some(AccountAction::Matched));
    assert_eq!(second.account_id, first.account_id);

    let replay = l.rp_client().signon(&req).unwrap();
    assert!(!replay.accepted);
    assert_eq!(replay.reason, Some(RejectReason::Replay));

    let acct = l.rp.account(first.account_id.as_deref().unwrap()).unwrap();
    assert!(acct.token.is_some());
    assert_eq!(acct.disclosed["country"].to_string(), "CH");
}

#[test]
fn meta_nonces_are_fresh_and_policy_shaped() {
    let l = local(LocalOptions::default());
    let c = l.rp_client();
    let (a, b) = (c.signon_meta().unwrap(), c.signon_meta().unwrap());
    assert_ne!(a.nonce, b.nonce);
    let ann = a.authority.expect("retrieval policy announces authorities");
    assert_eq!((ann.threshold, ann.authorities), (2, 3));

    let open = local(LocalOptions {
        policy: SignOnPolicy::default(),
        ..LocalOptions::default()
    });
    assert!(open.rp_client().signon_meta().unwrap().authority.is_none());
}

#[test]
fn expired_credential_is_rejected() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    l.clock.advance(9 * SECONDS_PER_DAY);
    let meta = l.rp_client().signon_meta().unwrap();
    let err = flows::prepare_signon(
        &meta,
        &l.params,
        &l.pk,
        &u.bundle,
        &u.secrets,
        &[],
        SignOnOptions::default(),
        l.clock.now(),
        &mut OsRng,
    )
    .unwrap_err();
    assert!(err.to_string().contains("expired"));
    // Built before expiry, submitted after.
    let fresh = local(LocalOptions::default());
    add_alice(&fresh);
    let u = issue(&fresh, "alice", "correct horse", "laptop", &[]);
    let meta = fresh.rp_client().signon_meta().unwrap();
    let req = flows::prepare_signon(
        &meta,
        &fresh.params,
        &fresh.pk,
        &u.bundle,
        &u.secrets,
        &[],
        SignOnOptions::default(),
        fresh.clock.now(),
        &mut OsRng,
    )
    .unwrap();
    fresh.clock.advance(8 * SECONDS_PER_DAY);
    let r = fresh.rp_client().signon(&req).unwrap();
    assert_eq!(r.reason, Some(RejectReason::Expired));
}

#[test]
fn untrusted_issuer_is_unknown_idp() {
    let l = local(LocalOptions::default());
    let other = local(LocalOptions {
        issuer: "elsewhere.test".into(),
        ..LocalOptions::default()
    });
    add_alice(&other);
    let u = issue(&other, "alice", "correct horse", "laptop", &[]);
    let meta = l.rp_client().signon_meta().unwrap();
    let req = flows::prepare_signon(
        &meta,
        &other.params,
        &other.pk,
        &u.bundle,
        &u.secrets,
        &[],
        SignOnOptions::default(),
        l.clock.now(),
        &mut OsRng,
    )
    .unwrap();
    let r = l.rp_client().signon(&req).unwrap();
    assert_eq!(r.reason, Some(RejectReason::UnknownIdp));

    // Right issuer name, wrong key.
    let mut forged = req.clone();
    forged.issuer = "idp.test".into();
    let r = l.rp_client().signon(&forged).unwrap();
    assert_eq!(r.reason, Some(RejectReason::BadProof));
}

#[test]
fn two_factor_from_one_device_is_policy_unmet() {
    let l = local(LocalOptions {
        policy: SignOnPolicy {
            require_retrieval: true,
            require_2fa: true,
            ..SignOnPolicy::default()
        },
        ..LocalOptions::default()
    });
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    let two = SignOnOptions {
        two_fa: true,
        ..SignOnOptions::default()
    };
    let (_, created) = sign_on(&l, &u, &[], two);
    assert_eq!(created.action, Some(AccountAction::Created));
    let (_, first) = sign_on(&l, &u, &[], two);
    assert_eq!(first.reason, Some(RejectReason::SecondFactorRequired));
    let (_, again) = sign_on(&l, &u, &[], two);
    assert_eq!(again.reason, Some(RejectReason::PolicyUnmet));
}

#[test]
fn sybil_fifty_sign_ons_one_account() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    let mut ids = std::collections::BTreeSet::new();
    for _ in 0..50 {
        let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
        assert!(r.accepted);
        ids.insert(r.account_id.unwrap());
    }
    assert_eq!(ids.len(), 1);
    assert_eq!(l.rp.account_count(), 1);
}

#[test]
fn warm_cache_survives_idp_outage() {
    let mut l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
    assert!(r.accepted);
    let fetches = l.rp.idp_fetches();
    l.stop_idp();
    assert!(l.idp_client().fetch_pk().is_err());
    let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
    assert_eq!(r.action, Some(AccountAction::Matched));
    assert_eq!(
        l.rp.idp_fetches(),
        fetches,
        "no IdP contact with a warm cache"
    );

    // Past the cache TTL the stale key is not served.
    l.clock.advance(3601);
    let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
    assert_eq!(r.reason, Some(RejectReason::UnknownIdp));
}

#[test]
fn cold_cache_with_idp_down_is_unknown_idp() {
    let mut l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    l.stop_idp();
    let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
    assert_eq!(r.reason, Some(RejectReason::UnknownIdp));
    assert_eq!(l.rp.account_count(), 0);
}

#[test]
fn inconsistent_pk_is_rejected_and_not_cached() {
    let real = local(LocalOptions::default());
    add_alice(&real);
    let u = issue(&real, "alice", "correct horse", "laptop", &[]);

    let mut bad: IdpPublicKey = real.pk.clone();
    bad.y[0] = hash_to_g1(b"corrupt");
    assert!(!bad.is_consistent());
    let bytes = Arc::new(bad.to_bytes());
    let fake = spawn(
        Router::new().route("/pk", get(move || async move { (*bytes).clone() })),
        "127.0.0.1:0".parse().unwrap(),
        1,
    )
    .unwrap();

    let rp = elpasso_service::rp::RpState::new(
        elpasso_service::rp::RpOptions::new(
            "rp.test",
            vec![elpasso_service::config::IdpEndpoint {
                name: "idp.test".into(),
                url: fake.url(),
            }],
        ),
        elpasso_service::store::KvStore::memory(),
        real.clock.clone(),
    )
    .unwrap();
    let rp_srv = spawn(
        elpasso_service::rp::router(rp.clone()),
        "127.0.0.1:0".parse().unwrap(),
        1,
    )
    .unwrap();
    let client = Client::new(&rp_srv.url());
    for attempt in 1..=2 {
        let meta = client.signon_meta().unwrap();
        let req = flows::prepare_signon(
            &meta,
            &real.params,
            &real.pk,
            &u.bundle,
            &u.secrets,
            &[],
            SignOnOptions::default(),
            real.clock.now(),
            &mut OsRng,
        )
        .unwrap();
        let r = client.signon(&req).unwrap();
        assert_eq!(r.reason, Some(RejectReason::UnknownIdp));
        assert_eq!(rp.idp_fetches(), attempt, "bad key must not be cached");
    }
}

#[test]
fn report_recovers_login_at_the_authority() {
    let mut l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
    let id = r.account_id.unwrap();

    assert!(l.rp.account(&id).unwrap().token.is_some());
    assert_eq!(
        l.idp.h_gamma("alice").unwrap(),
        exp(&retrieval_base(), &u.bundle.gamma)
    );

    l.stop_authority(0);
    let out = l.rp_client().report(&id).unwrap();
    assert!(out.resolved);
    assert_eq!(out.partials, 2);
    let admin = Client::new(l.authority_url(1)).with_token(&l.admin_token);
    let case = admin.case(&out.case_id).unwrap();
    assert_eq!(case.login.as_deref(), Some("alice"));
    assert_eq!(case.account_id, id);
    assert_eq!(
        Client::new(l.authority_url(1))
            .case(&out.case_id)
            .unwrap_err()
            .status(),
        Some(401)
    );

    l.stop_authority(1);
    let err = l.rp_client().report(&id).unwrap_err();
    assert_eq!(err.status(), Some(502));
}

#[test]
fn report_needs_a_stored_token() {
    let l = local(LocalOptions {
        policy: SignOnPolicy::default(),
        ..LocalOptions::default()
    });
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
    assert!(r.accepted);
    let err = l.rp_client().report(&r.account_id.unwrap()).unwrap_err();
    assert_eq!(err.status(), Some(409));
    assert_eq!(
        l.rp_client().report("nobody").unwrap_err().status(),
        Some(404)
    );

    // Guest without retrieval leaves nothing to report.
    let (_, g) = sign_on(
        &l,
        &u,
        &[],
        SignOnOptions {
            guest: true,
            ..SignOnOptions::default()
        },
    );
    assert_eq!(g.action, Some(AccountAction::Guest));
    assert!(g.account_id.is_none());
}

#[test]
fn forged_partial_is_identified_by_index() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &[]);
    let (_, r) = sign_on(&l, &u, &[], SignOnOptions::default());
    let token = l.rp.account(&r.account_id.unwrap()).unwrap().token.unwrap();

    let rp_auth = |i: usize| Client::new(l.authority_url(i)).with_token(&l.rp_token);
    let mut report = RetrievalReport {
        case_id: "case-1".into(),
        domain: "rp.test".into(),
        account_id: "x".into(),
        token,
        partials: vec![],
    };
    let post = |i: usize, rep: &RetrievalReport| {
        rp_auth(i)
            .post_raw("/partial", "application/octet-stream", rep.encode())
            .unwrap()
    };
    let (s1, b1) = post(0, &report);
    let (s2, b2) = post(1, &report);
    assert_eq!((s1, s2), (200, 200));
    let p1 = elpasso_core::PartialDecryption::decode(&b1).unwrap();
    let mut p2 = elpasso_core::PartialDecryption::decode(&b2).unwrap();
    p2.share += hash_to_g1(b"forged");
    report.partials = vec![p1.clone(), p2];
    let (status, body) = rp_auth(2)
        .post_raw("/recover", "application/octet-stream", report.encode())
        .unwrap();
    assert_eq!(status, 422);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "invalid-partial");
    assert_eq!(v["index"], 2);

    report.partials = vec![p1];
    let (status, body) = rp_auth(2)
        .post_raw("/recover", "application/octet-stream", report.encode())
        .unwrap();
    assert_eq!(status, 422);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "below-threshold");

    let (status, _) = Client::new(l.authority_url(0))
        .post_raw("/partial", "application/octet-stream", report.encode())
        .unwrap();
    assert_eq!(status, 401);
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn responses_never_carry_secrets() {
    let mut rng = OsRng;
    let params = elpasso_core::groups::PublicParams::setup(128).unwrap();
    let info = [
        ("age", elpasso_core::pscred::AttributeEncoding::Integer),
        ("country", elpasso_core::pscred::AttributeEncoding::Text),
    ];
    let kp = elpasso_core::pscred::keygen(
        &params,
        elpasso_core::protocol::sso_schema(&info, true).unwrap(),
        &mut rng,
    );
    let sk = kp.secret_bytes();
    let l = elpasso_service::local::Local::start_with_key(LocalOptions::default(), kp, &mut rng)
        .unwrap();
    add_alice(&l);

    for format in [
        elpasso_service::http::Format::Binary,
        elpasso_service::http::Format::Json,
    ] {
        let log = elpasso_service::client::ExchangeLog::default();
        let session = l
            .idp_client()
            .with_log(log.clone())
            .login("alice", "correct horse", "laptop")
            .unwrap();
        let idp = l
            .idp_client()
            .with_token(session.token)
            .with_format(format)
            .with_log(log.clone());
        let secrets = elpasso_core::protocol::UserSecrets::generate(&mut rng);
        let bundle = flows::fetch_credential(
            &idp,
            &l.pk,
            "idp.test",
            &secrets,
            &["age".into()],
            true,
            &mut rng,
        )
        .unwrap();
        let rp = l.rp_client().with_format(format).with_log(log.clone());
        for opts in [
            SignOnOptions::default(),
            SignOnOptions {
                guest: true,
                ..Default::default()
            },
        ] {
            let (_, r) = flows::sign_on(
                &rp,
                &l.params,
                &l.pk,
                &bundle,
                &secrets,
                &[],
                opts,
                l.clock.now(),
                &mut rng,
            )
            .unwrap();
            assert!(r.accepted);
        }
        let _ = idp.idp_meta().unwrap();
        let _ = idp.fetch_pk().unwrap();
        let _ = idp.enroll_pending().unwrap();
        let _ = idp.request_id(
            &elpasso_core::protocol::request_id(&l.pk, &secrets, &[], true, &mut rng)
                .unwrap()
                .1,
        );

        let gamma = scalar_to_bytes(&bundle.gamma);
        let mut needles: Vec<(String, Vec<u8>)> = vec![];
        for (name, raw) in [
            ("s", scalar_to_bytes(secrets.s()).to_vec()),
            ("s_d", scalar_to_bytes(secrets.s_d()).to_vec()),
            ("sk", sk.clone()),
        ] {
            let mut le = raw.clone();
            le.reverse();
            needles.push((name.into(), hex::encode(&raw).into_bytes()));
            needles.push((name.into(), hex::encode(&le).into_bytes()));
            needles.push((name.into(), raw.clone()));
            needles.push((name.into(), le));
        }
        let log = log.lock();
        assert!(log.len() >= 8);
        for ex in log.iter() {
            for (name, n) in &needles {
                assert!(!contains(&ex.body, n), "{name} leaked in {}", ex.url);
            }
            // γ goes back only to its owner, in the issuance reply.
            if !ex.url.ends_with("/request-id") {
                assert!(!contains(&ex.body, &gamma), "gamma leaked in {}", ex.url);
                assert!(
                    !contains(&ex.body, hex::encode(gamma).as_bytes()),
                    "gamma leaked in {}",
                    ex.url
                );
            }
        }
    }
}

#[test]
fn rotation_moves_the_account_to_the_new_secret() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let old = issue(&l, "alice", "correct horse", "laptop", &[]);
    let (_, r) = sign_on(&l, &old, &[], SignOnOptions::default());
    let id = r.account_id.unwrap();

    let early = issue(&l, "alice", "correct horse", "laptop", &[]);
    let r = flows::rotate(
        &l.rp_client(),
        &l.params,
        &l.pk,
        (&old.bundle, &old.secrets),
        (&early.bundle, &early.secrets),
        l.clock.now(),
        &mut OsRng,
    )
    .unwrap();
    assert_eq!(r.reason, Some(RejectReason::NotExpired));

    l.clock.advance(8 * SECONDS_PER_DAY);
    let new = issue(&l, "alice", "correct horse", "laptop", &[]);
    let r = flows::rotate(
        &l.rp_client(),
        &l.params,
        &l.pk,
        (&old.bundle, &old.secrets),
        (&new.bundle, &new.secrets),
        l.clock.now(),
        &mut OsRng,
    )
    .unwrap();
    assert_eq!(r.action, Some(AccountAction::Rotated));
    assert_eq!(r.account_id.as_deref(), Some(id.as_str()));

    let (_, r) = sign_on(&l, &new, &[], SignOnOptions::default());
    assert_eq!(r.action, Some(AccountAction::Matched));
    assert_eq!(r.account_id.as_deref(), Some(id.as_str()));

    // A fresh credential over the old secret now hits the blocklist.
    let idp = l.session("alice", "correct horse", "laptop");
    let again = flows::fetch_credential(
        &idp,
        &l.pk,
        "idp.test",
        &old.secrets,
        &[],
        false,
        &mut OsRng,
    )
    .unwrap();
    let revived = common::User {
        login: "alice".into(),
        secrets: old.secrets,
        bundle: again,
        idp,
    };
    let (_, r) = sign_on(&l, &revived, &[], SignOnOptions::default());
    assert_eq!(r.reason, Some(RejectReason::Blocklisted));
}
