//! A complete in-process deployment (IdP, authorities, one RP) on loopback
//! ports, for integration tests and benchmarks.

use std::net::SocketAddr;
use std::sync::Arc;

use elpasso_core::groups::PublicParams;
use elpasso_core::protocol::{sso_schema, Clock, ManualClock, SignOnPolicy, SystemClock};
use elpasso_core::pscred::{keygen, AttributeEncoding, AttributeValue, IdpKeyPair};
use elpasso_core::retrieval::authority_keygen;
use elpasso_core::{AuthorityPublic, IdpPublicKey};
use rand::{CryptoRng, RngCore};

use crate::authority::{self, AuthorityOptions, AuthorityState};
use crate::client::Client;
use crate::config::IdpEndpoint;
use crate::http::random_token;
use crate::idp::{self, IdpOptions, IdpState};
use crate::rp::{self, AuthoritySet, RpOptions, RpState};
use crate::server::{spawn, ServerHandle};
use crate::store::KvStore;

#[derive(Debug, Clone)]
pub struct LocalOptions {
    pub issuer: String,
    pub domain: String,
    pub info: Vec<(String, AttributeEncoding)>,
    pub two_fa: bool,
    /// `(n, t)`; no authorities when `None`.
    pub authorities: Option<(usize, usize)>,
    pub policy: SignOnPolicy,
    pub validity_days: u64,
    pub workers: usize,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            issuer: "idp.test".into(),
            domain: "rp.test".into(),
            info: vec![
                ("age".into(), AttributeEncoding::Integer),
                ("country".into(), AttributeEncoding::Text),
            ],
            two_fa: true,
            authorities: Some((3, 2)),
            policy: SignOnPolicy {
                require_retrieval: true,
                ..SignOnPolicy::default()
            },
            validity_days: 7,
            workers: 2,
        }
    }
}

pub struct LocalAuthority {
    pub state: Arc<AuthorityState>,
    server: Option<ServerHandle>,
}

pub struct Local {
    pub params: PublicParams,
    pub pk: IdpPublicKey,
    pub clock: Arc<ManualClock>,
    pub idp: Arc<IdpState>,
    pub rp: Arc<RpState>,
    pub authorities: Vec<LocalAuthority>,
    pub authority_public: Option<AuthorityPublic>,
    pub authority_token: String,
    pub rp_token: String,
    pub admin_token: String,
    idp_server: Option<ServerHandle>,
    rp_server: Option<ServerHandle>,
    idp_url: String,
    authority_urls: Vec<String>,
}

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

impl Local {
    pub fn start<R: RngCore + CryptoRng>(opts: LocalOptions, rng: &mut R) -> anyhow::Result<Self> {
        let params = PublicParams::setup(128)?;
        let info: Vec<(&str, AttributeEncoding)> =
            opts.info.iter().map(|(l, e)| (l.as_str(), *e)).collect();
        let kp = keygen(&params, sso_schema(&info, opts.two_fa)?, rng);
        Self::start_with_key(opts, kp, rng)
    }

    pub fn start_with_key<R: RngCore + CryptoRng>(
        opts: LocalOptions,
        kp: IdpKeyPair,
        rng: &mut R,
    ) -> anyhow::Result<Self> {
        let params = PublicParams::setup(128)?;
        let clock = Arc::new(ManualClock::new(SystemClock.now()));
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let authority_token = random_token();
        let rp_token = random_token();
        let admin_token = random_token();
        let pk = kp.pk.clone();

        let idp = IdpState::new(
            IdpOptions {
                validity_days: opts.validity_days,
                authority_tokens: vec![authority_token.clone()],
                ..IdpOptions::new(&opts.issuer)
            },
            kp,
            KvStore::memory(),
            dyn_clock.clone(),
        )?;
        let idp_server = spawn(idp::router(idp.clone()), loopback(), opts.workers)?;
        let idp_url = idp_server.url();

        let mut authorities = vec![];
        let mut authority_public = None;
        if let Some((n, t)) = opts.authorities {
            let set = authority_keygen(&params, n, t, rng)?;
            for share in set.shares {
                let state = AuthorityState::new(
                    AuthorityOptions {
                        idp_url: idp_url.clone(),
                        idp_token: authority_token.clone(),
                        rp_tokens: vec![rp_token.clone()],
                        admin_token: admin_token.clone(),
                    },
                    set.public.clone(),
                    share,
                    KvStore::memory(),
                    dyn_clock.clone(),
                )?;
                let server = spawn(authority::router(state.clone()), loopback(), 1)?;
                authorities.push(LocalAuthority {
                    state,
                    server: Some(server),
                });
            }
            authority_public = Some(set.public);
        }
        let authority_urls: Vec<String> = authorities
            .iter()
            .map(|a| a.server.as_ref().expect("running").url())
            .collect();

        let rp = RpState::new(
            RpOptions {
                policy: opts.policy,
                authority: authority_public.clone().map(|public| AuthoritySet {
                    public,
                    endpoints: authority_urls.clone(),
                    token: rp_token.clone(),
                }),
                ..RpOptions::new(
                    &opts.domain,
                    vec![IdpEndpoint {
                        name: opts.issuer.clone(),
                        url: idp_url.clone(),
                    }],
                )
            },
            KvStore::memory(),
            dyn_clock,
        )?;
        let rp_server = spawn(rp::router(rp.clone()), loopback(), opts.workers)?;

        Ok(Self {
            params,
            pk,
            clock,
            idp,
            rp,
            authorities,
            authority_public,
            authority_token,
            rp_token,
            admin_token,
            idp_server: Some(idp_server),
            rp_server: Some(rp_server),
            idp_url,
            authority_urls,
        })
    }

    pub fn idp_url(&self) -> &str {
        &self.idp_url
    }

    pub fn rp_url(&self) -> String {
        self.rp_server.as_ref().expect("RP running").url()
    }

    pub fn authority_url(&self, i: usize) -> &str {
        &self.authority_urls[i]
    }

    pub fn idp_client(&self) -> Client {
        Client::new(&self.idp_url)
    }

    pub fn rp_client(&self) -> Client {
        Client::new(&self.rp_url())
    }

    pub fn add_user(&self, login: &str, password: &str, info: &[(&str, AttributeValue)]) {
        self.idp
            .add_user(
                login,
                password,
                info.iter()
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect(),
            )
            .expect("user is valid for the schema");
    }

    /// Logs in and returns an IdP client carrying the session token.
    pub fn session(&self, login: &str, password: &str, device: &str) -> Client {
        let s = self
            .idp_client()
            .login(login, password, device)
            .expect("login succeeds");
        self.idp_client().with_token(s.token)
    }

    pub fn idp_running(&self) -> bool {
        self.idp_server.is_some()
    }

    /// Kills the IdP; its port stops accepting connections.
    pub fn stop_idp(&mut self) {
        if let Some(s) = self.idp_server.take() {
            s.stop();
        }
    }

    pub fn stop_authority(&mut self, i: usize) {
        if let Some(s) = self.authorities[i].server.take() {
            s.stop();
        }
    }
}
