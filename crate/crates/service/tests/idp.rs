mod common;

use common::{add_alice, issue, local};
use elpasso_core::groups::{hash_to_g1, PublicParams};
use elpasso_core::protocol::enroll::{enroll_approve, enroll_init, fingerprint};
use elpasso_core::protocol::{request_id, sso_schema, UserSecrets};
use elpasso_core::pscred::{keygen, AttributeEncoding};
use elpasso_core::wire::Envelope;
use elpasso_core::Scalar;
use elpasso_service::flows;
use elpasso_service::local::LocalOptions;
use elpasso_service::Client;
use rand::rngs::OsRng;

#[test]
fn pk_bytes_are_stable_and_consistent() {
    let l = local(LocalOptions::default());
    let c = l.idp_client();
    let (a, pk) = c.fetch_pk().unwrap();
    let (b, _) = c.fetch_pk().unwrap();
    assert_eq!(a, b);
    assert_eq!(pk, l.pk);
    assert!(pk.is_consistent());

    let resp = reqwest::blocking::get(format!("{}/pk", l.idp_url())).unwrap();
    let cc = resp.headers()["cache-control"]
        .to_str()
        .unwrap()
        .to_string();
    let etag = resp.headers()["etag"].to_str().unwrap().to_string();
    assert!(cc.contains("max-age"));
    let again = reqwest::blocking::Client::new()
        .get(format!("{}/pk", l.idp_url()))
        .header("if-none-match", &etag)
        .send()
        .unwrap();
    assert_eq!(again.status().as_u16(), 304);
}

#[test]
fn pk_size_grows_linearly_with_attributes() {
    let params = PublicParams::setup(128).unwrap();
    let size = |n_info: usize| {
        let labels: Vec<String> = (0..n_info).map(|i| format!("a{i:02}")).collect();
        let info: Vec<(&str, AttributeEncoding)> = labels
            .iter()
            .map(|l| (l.as_str(), AttributeEncoding::Integer))
            .collect();
        keygen(&params, sso_schema(&info, false).unwrap(), &mut OsRng)
            .pk
            .to_bytes()
            .len()
    };
    let (s3, s4, s20) = (size(0), size(1), size(17));
    let step = s4 - s3;
    assert_eq!(s20 - s3, 17 * step);
    // g, Y_i in G1; g~, X~, Y~_i in G2; the rest is framing and the schema.
    let elements = |n: usize| 48 * (1 + n) + 96 * (2 + n);
    assert_eq!(elements(3), 672);
    assert!(
        step >= 48 + 96 && step - (48 + 96) <= 16,
        "per-attribute step {step}"
    );
    assert!(
        s3 > elements(3) && s3 - elements(3) <= 64,
        "3-attribute size {s3}"
    );
}

#[test]
fn issuance_round_trip_and_errors() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let u = issue(&l, "alice", "correct horse", "laptop", &["age"]);
    assert_eq!(u.bundle.info.len(), 1);
    assert!(!u
        .bundle
        .is_expired(elpasso_core::protocol::Clock::now(l.clock.as_ref())));

    // No session.
    let secrets = UserSecrets::generate(&mut OsRng);
    let (_, msg) = request_id(&l.pk, &secrets, &[], false, &mut OsRng).unwrap();
    let err = l.idp_client().request_id(&msg).unwrap_err();
    assert_eq!(err.status(), Some(401));

    // Wrong password.
    let err = l.idp_client().login("alice", "nope", "laptop").unwrap_err();
    assert_eq!(err.status(), Some(401));

    // Tampered proof.
    let mut bad = msg.clone();
    bad.proof.responses[0] += Scalar::from(1u64);
    let err = u.idp.request_id(&bad).unwrap_err();
    assert_eq!(err.status(), Some(422));
    assert_eq!(err.code(), Some("bad-proof"));

    // Tampered commitment.
    let mut bad = msg.clone();
    bad.commitment += hash_to_g1(b"noise");
    assert_eq!(u.idp.request_id(&bad).unwrap_err().status(), Some(422));

    // Info the IdP has not verified for this user.
    l.add_user("bob", "pw", &[]);
    let bob = l.session("bob", "pw", "phone");
    let err = flows::fetch_credential(
        &bob,
        &l.pk,
        "idp.test",
        &secrets,
        &["age".into()],
        false,
        &mut OsRng,
    )
    .unwrap_err();
    assert!(err.to_string().contains("422"), "{err}");
}

#[test]
fn revoked_device_is_refused() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let laptop = l.session("alice", "correct horse", "laptop");
    let phone = l.session("alice", "correct horse", "phone");
    laptop.revoke("phone").unwrap();
    assert_eq!(laptop.revoke("phone").unwrap_err().status(), Some(409));
    assert_eq!(laptop.revoke("tablet").unwrap_err().status(), Some(404));

    let secrets = UserSecrets::generate(&mut OsRng);
    let (_, msg) = request_id(&l.pk, &secrets, &[], false, &mut OsRng).unwrap();
    let err = phone.request_id(&msg).unwrap_err();
    assert_eq!(err.status(), Some(403));
    let err = l
        .idp_client()
        .login("alice", "correct horse", "phone")
        .unwrap_err();
    assert_eq!(err.status(), Some(403));
    assert!(laptop.request_id(&msg).is_ok());
}

#[test]
fn lookup_requires_authority_and_matches_exactly() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let h = l.idp.h_gamma("alice").unwrap();
    let auth = l.idp_client().with_token(&l.authority_token);
    assert_eq!(auth.lookup(&h).unwrap().as_deref(), Some("alice"));
    assert_eq!(auth.lookup(&hash_to_g1(b"random")).unwrap(), None);
    let err = l.idp_client().lookup(&h).unwrap_err();
    assert_eq!(err.status(), Some(401));
    let err = l.idp_client().with_token("guess").lookup(&h).unwrap_err();
    assert_eq!(err.status(), Some(401));
}

#[test]
fn enrollment_relay() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    l.add_user("mallory", "pw", &[]);
    let old = issue(&l, "alice", "correct horse", "laptop", &[]);
    let new_dev = l.session("alice", "correct horse", "phone");
    let mallory = l.session("mallory", "pw", "evil");

    let (eph, init) = enroll_init("phone", &mut OsRng);
    new_dev.enroll_init(&init).unwrap();
    assert_eq!(new_dev.enroll_complete("phone").unwrap(), None);
    let pending = old.idp.enroll_pending().unwrap();
    assert_eq!(pending, vec![init.clone()]);
    assert!(mallory.enroll_pending().unwrap().is_empty());

    let fp = fingerprint(eph.public(), "4711");
    let approve = enroll_approve(&old.secrets, &init, "4711", &fp, &mut OsRng).unwrap();

    let err = mallory.enroll_approve(&approve).unwrap_err();
    assert_eq!(err.status(), Some(401));
    let err = new_dev.enroll_approve(&approve).unwrap_err();
    assert_eq!(err.status(), Some(401));
    let mut unknown = approve.clone();
    unknown.device_id = "toaster".into();
    assert_eq!(
        old.idp.enroll_approve(&unknown).unwrap_err().status(),
        Some(404)
    );

    old.idp.enroll_approve(&approve).unwrap();
    let done = new_dev.enroll_complete("phone").unwrap().unwrap();
    assert_eq!(done.ciphertext, approve.ciphertext);
    assert_eq!(done.nonce, approve.nonce);
    assert_eq!(done.approver_pk, approve.approver_pk);

    let s =
        elpasso_core::protocol::enroll::enroll_complete(&eph, &done, "4711", &mut OsRng).unwrap();
    assert_eq!(s.s(), old.secrets.s());
    assert_ne!(s.s_d(), old.secrets.s_d());
}

#[test]
fn json_and_binary_bodies_are_equivalent() {
    let l = local(LocalOptions::default());
    add_alice(&l);
    let s = l
        .idp_client()
        .login("alice", "correct horse", "laptop")
        .unwrap();
    let json = Client::new(l.idp_url())
        .with_token(&s.token)
        .with_format(elpasso_service::http::Format::Json);
    let secrets = UserSecrets::generate(&mut OsRng);
    let b = flows::fetch_credential(
        &json,
        &l.pk,
        "idp.test",
        &secrets,
        &["country".into()],
        true,
        &mut OsRng,
    )
    .unwrap();
    assert_eq!(b.info["country"].to_string(), "CH");

    let (_, msg) = request_id(&l.pk, &secrets, &[], false, &mut OsRng).unwrap();
    let (status, _) = l
        .idp_client()
        .with_token(&s.token)
        .post_raw(
            "/request-id",
            "application/octet-stream",
            msg.encode()[..10].to_vec(),
        )
        .unwrap();
    assert_eq!(status, 400);
}
