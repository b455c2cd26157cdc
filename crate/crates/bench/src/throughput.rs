//! Closed-loop load against a running IdP or RP.
//!
//! Requests are built before the clock starts, so the timed loop measures the
//! service rather than the client's proof generation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use elpasso_core::groups::PublicParams;
use elpasso_core::protocol::{RequestIdMsg, SignOnRequest, UserSecrets};
use elpasso_core::pscred::AttributeValue;
use elpasso_core::wire::Envelope;
use elpasso_service::flows::{self, SignOnOptions};
use elpasso_service::local::{Local, LocalOptions};
use elpasso_service::Client;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::stats::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Setup phase: `/request-id` at the IdP.
    Idp,
    /// Sign-on phase: `/signon` at the RP.
    Rp,
}

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub idp_url: String,
    pub rp_url: String,
    pub login: String,
    pub password: String,
    pub device: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputConfig {
    pub target: Target,
    pub concurrency: usize,
    pub requests: usize,
    /// Client-side delay added before every request, emulating a network round trip.
    pub rtt_ms: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50_ms: Option<f64>,
    pub p90_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageSize {
    pub message: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub config: ThroughputConfig,
    pub completed: usize,
    pub errors: usize,
    pub seconds: f64,
    pub ops_per_sec: f64,
    pub latency: Latency,
    pub payloads: Vec<MessageSize>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn size(message: &str, bytes: usize) -> MessageSize {
    MessageSize {
        message: message.into(),
        bytes,
    }
}

enum Prepared {
    Idp(Vec<RequestIdMsg>),
    Rp(Vec<SignOnRequest>),
}

/// Logs in once, then builds `cfg.requests` messages for the target.
fn prepare(
    ep: &Endpoint,
    cfg: &ThroughputConfig,
    rng: &mut ChaCha20Rng,
) -> anyhow::Result<(Client, Prepared, Vec<MessageSize>)> {
    let idp = Client::new(&ep.idp_url);
    let (pk_bytes, pk) = idp.fetch_pk()?;
    let issuer = idp.idp_meta()?.name;
    let session = idp.login(&ep.login, &ep.password, &ep.device)?;
    let idp = idp.with_token(session.token);
    let secrets = UserSecrets::generate(rng);
    let mut sizes = vec![size("idp-public-key", pk_bytes.len())];
    match cfg.target {
        Target::Idp => {
            let msgs = (0..cfg.requests.max(1))
                .map(|_| {
                    elpasso_core::protocol::request_id(&pk, &secrets, &[], false, rng).map(|m| m.1)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let reply = idp.request_id(&msgs[0])?;
            sizes.push(size("request-id", msgs[0].encode().len()));
            sizes.push(size("blinded-credential", reply.encode().len()));
            let msgs = msgs.into_iter().take(cfg.requests).collect();
            Ok((idp, Prepared::Idp(msgs), sizes))
        }
        Target::Rp => {
            let bundle = flows::fetch_credential(&idp, &pk, &issuer, &secrets, &[], false, rng)?;
            let params = PublicParams::setup(128)?;
            let rp = Client::new(&ep.rp_url);
            let at = now();
            let build = |rng: &mut ChaCha20Rng| -> anyhow::Result<SignOnRequest> {
                let meta = rp.signon_meta()?;
                Ok(flows::prepare_signon(
                    &meta,
                    &params,
                    &pk,
                    &bundle,
                    &secrets,
                    &[],
                    SignOnOptions::default(),
                    at,
                    rng,
                )?)
            };
            // One sign-on up front creates the account and warms the RP's key cache.
            let first = build(rng)?;
            let result = rp.signon(&first)?;
            anyhow::ensure!(
                result.accepted,
                "warm-up sign-on rejected: {:?}",
                result.reason
            );
            sizes.push(size("sign-on-request", first.encode().len()));
            sizes.push(size("sign-on-result", result.encode().len()));
            let reqs = (0..cfg.requests)
                .map(|_| build(rng))
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok((rp, Prepared::Rp(reqs), sizes))
        }
    }
}

pub fn run(ep: &Endpoint, cfg: &ThroughputConfig) -> anyhow::Result<ThroughputReport> {
    anyhow::ensure!(cfg.concurrency > 0, "concurrency must be positive");
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (client, prepared, payloads) = prepare(ep, cfg, &mut rng)?;
    let prepared = Arc::new(prepared);
    let next = Arc::new(AtomicUsize::new(0));
    let total = cfg.requests;
    let rtt = Duration::from_millis(cfg.rtt_ms);

    let start = Instant::now();
    let workers: Vec<_> = (0..cfg.concurrency)
        .map(|_| {
            let prepared = prepared.clone();
            let next = next.clone();
            let client = client.clone();
            thread::spawn(move || {
                let mut lat = vec![];
                let mut errors = 0usize;
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= total {
                        break;
                    }
                    let t = Instant::now();
                    thread::sleep(rtt);
                    let ok = match &*prepared {
                        Prepared::Idp(m) => client.request_id(&m[i]).is_ok(),
                        Prepared::Rp(m) => client.signon(&m[i]).is_ok_and(|r| r.accepted),
                    };
                    lat.push(t.elapsed().as_secs_f64() * 1e3);
                    errors += !ok as usize;
                }
                (lat, errors)
            })
        })
        .collect();
    let mut latencies = vec![];
    let mut errors = 0;
    for w in workers {
        let (l, e) = w
            .join()
            .map_err(|_| anyhow::anyhow!("load worker panicked"))?;
        latencies.extend(l);
        errors += e;
    }
    let seconds = start.elapsed().as_secs_f64();
    let completed = latencies.len() - errors;
    Ok(ThroughputReport {
        config: *cfg,
        completed,
        errors,
        seconds,
        ops_per_sec: if seconds > 0.0 {
            completed as f64 / seconds
        } else {
            0.0
        },
        latency: Latency {
            p50_ms: percentile(&latencies, 50.0),
            p90_ms: percentile(&latencies, 90.0),
            p99_ms: percentile(&latencies, 99.0),
            max_ms: percentile(&latencies, 100.0),
        },
        payloads,
    })
}

/// An in-process deployment with one bench user, for runs without external services.
pub fn start_local(workers: usize) -> anyhow::Result<(Local, Endpoint)> {
    let l = Local::start(
        LocalOptions {
            workers,
            ..LocalOptions::default()
        },
        &mut rand::rngs::OsRng,
    )?;
    l.add_user(
        "bench",
        "bench-password",
        &[
            ("age", AttributeValue::Integer(40)),
            ("country", AttributeValue::Text("NL".into())),
        ],
    );
    let ep = Endpoint {
        idp_url: l.idp_url().to_string(),
        rp_url: l.rp_url(),
        login: "bench".into(),
        password: "bench-password".into(),
        device: "bench-device".into(),
    };
    Ok((l, ep))
}
