#![allow(dead_code)]

use elpasso_core::protocol::{
    Clock, CredentialBundle, Disclosure, SignOnRequest, SignOnResult, UserSecrets,
};
use elpasso_core::pscred::AttributeValue;
use elpasso_service::flows::{self, SignOnOptions};
use elpasso_service::local::{Local, LocalOptions};
use elpasso_service::Client;
use rand::rngs::OsRng;

pub struct User {
    pub login: String,
    pub secrets: UserSecrets,
    pub bundle: CredentialBundle,
    pub idp: Client,
}

pub fn local(opts: LocalOptions) -> Local {
    Local::start(opts, &mut OsRng).expect("deployment starts")
}

pub fn add_alice(l: &Local) {
    l.add_user(
        "alice",
        "correct horse",
        &[
            ("age", AttributeValue::Integer(31)),
            ("country", AttributeValue::Text("CH".into())),
        ],
    );
}

pub fn issue(l: &Local, login: &str, password: &str, device: &str, info: &[&str]) -> User {
    let idp = l.session(login, password, device);
    let secrets = UserSecrets::generate(&mut OsRng);
    let info: Vec<String> = info.iter().map(|s| s.to_string()).collect();
    let bundle = flows::fetch_credential(
        &idp,
        &l.pk,
        l.idp.name(),
        &secrets,
        &info,
        false,
        &mut OsRng,
    )
    .expect("issuance succeeds");
    User {
        login: login.into(),
        secrets,
        bundle,
        idp,
    }
}

pub fn sign_on(
    l: &Local,
    u: &User,
    disclose: &[&str],
    opts: SignOnOptions,
) -> (SignOnRequest, SignOnResult) {
    let disclose: Vec<Disclosure> = disclose
        .iter()
        .map(|d| Disclosure::parse(d).unwrap())
        .collect();
    flows::sign_on(
        &l.rp_client(),
        &l.params,
        &l.pk,
        &u.bundle,
        &u.secrets,
        &disclose,
        opts,
        l.clock.now(),
        &mut OsRng,
    )
    .expect("sign-on round trip")
}
