use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use elpasso_core::groups::PublicParams;
use elpasso_core::protocol::{sso_schema, SystemClock};
use elpasso_core::pscred::{keygen, AttributeEncoding};
use elpasso_core::retrieval::authority_keygen;
use elpasso_service::config::{AuthorityConfig, IdpConfig, InfoValue, RpConfig};
use elpasso_service::{authority, idp, rp};
use rand::rngs::OsRng;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "elpasso-server",
    version,
    about = "Identity provider, relying party and retrieval authority"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an issuer key pair (`idp.key`, `idp.pk`).
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Info attributes as `label:integer` or `label:text`, comma separated.
        #[arg(long, default_value = "")]
        info: String,
        /// Reserve a device-secret slot so credentials support 2FA.
        #[arg(long)]
        two_fa: bool,
    },
    /// Deal authority shares: `public.json` and `share-<i>.json`.
    AuthorityKeygen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Register a user in the IdP store.
    AddUser {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        login: String,
        #[arg(long, env = "ELPASSO_USER_PASSWORD")]
        password: String,
        /// `label=value`, repeatable.
        #[arg(long = "info")]
        info: Vec<String>,
    },
    Idp {
        #[arg(long)]
        config: PathBuf,
    },
    Rp {
        #[arg(long)]
        config: PathBuf,
    },
    Authority {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_info(spec: &str) -> anyhow::Result<Vec<(String, AttributeEncoding)>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (label, enc) = item
                .split_once(':')
                .with_context(|| format!("{item:?}: expected label:encoding"))?;
            let enc = match enc {
                "integer" | "int" => AttributeEncoding::Integer,
                "text" | "string" => AttributeEncoding::Text,
                other => bail!("unknown encoding {other:?}"),
            };
            Ok((label.to_string(), enc))
        })
        .collect()
}

fn write_new(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if path.exists() {
        bail!("{} already exists", path.display());
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

async fn serve(router: axum::Router, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let clock = Arc::new(SystemClock);
    let params = PublicParams::setup(128)?;
    match cli.cmd {
        Cmd::Keygen { out, info, two_fa } => {
            let info = parse_info(&info)?;
            let refs: Vec<(&str, AttributeEncoding)> =
                info.iter().map(|(l, e)| (l.as_str(), *e)).collect();
            let schema = sso_schema(&refs, two_fa)?;
            let kp = keygen(&params, schema, &mut OsRng);
            std::fs::create_dir_all(&out)?;
            write_new(&out.join("idp.key"), &kp.to_bytes())?;
            write_new(&out.join("idp.pk"), &kp.pk.to_bytes())?;
            println!("{}", hex::encode(kp.pk.fingerprint()));
        }
        Cmd::AuthorityKeygen { n, t, out_dir } => {
            let set = authority_keygen(&params, n, t, &mut OsRng)?;
            std::fs::create_dir_all(&out_dir)?;
            write_new(
                &out_dir.join("public.json"),
                serde_json::to_string_pretty(&set.public)?.as_bytes(),
            )?;
            for share in &set.shares {
                write_new(
                    &out_dir.join(format!("share-{}.json", share.index)),
                    serde_json::to_string(share)?.as_bytes(),
                )?;
            }
        }
        Cmd::AddUser {
            config,
            login,
            password,
            info,
        } => {
            let cfg = IdpConfig::load(&config)?;
            let state = idp::IdpState::from_config(&cfg, clock)?;
            let schema = &state.public_key().schema;
            let mut values = BTreeMap::new();
            for item in &info {
                let (k, v) = item
                    .split_once('=')
                    .with_context(|| format!("{item:?}: expected label=value"))?;
                let raw = match v.parse::<u64>() {
                    Ok(n) => InfoValue::Int(n),
                    Err(_) => InfoValue::Text(v.to_string()),
                };
                values.insert(k.to_string(), raw.to_attribute(schema, k)?);
            }
            state.add_user(&login, &password, values)?;
        }
        Cmd::Idp { config } => {
            let cfg = IdpConfig::load(&config)?;
            let state = idp::IdpState::from_config(&cfg, clock)?;
            tokio::runtime::Runtime::new()?.block_on(serve(idp::router(state), cfg.listen))?;
        }
        Cmd::Rp { config } => {
            let cfg = RpConfig::load(&config)?;
            let state = rp::RpState::from_config(&cfg, clock)?;
            tokio::runtime::Runtime::new()?.block_on(serve(rp::router(state), cfg.listen))?;
        }
        Cmd::Authority { config } => {
            let cfg = AuthorityConfig::load(&config)?;
            let state = authority::AuthorityState::from_config(&cfg, clock)?;
            tokio::runtime::Runtime::new()?
                .block_on(serve(authority::router(state), cfg.listen))?;
        }
    }
    Ok(())
}
