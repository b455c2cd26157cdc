//! `elpasso`: the user-side client.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 keystore, 4 network,
//! 5 rejected by a server, 6 credential expired, 7 invalid input.

mod commands;
mod error;
mod keystore;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "elpasso",
    version,
    about = "Single sign-on client with unlinkable credentials"
)]
struct Cli {
    /// Keystore file.
    #[arg(long, global = true, env = "ELPASSO_KEYSTORE")]
    keystore: Option<PathBuf>,
    /// Print one JSON object per command instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct IdpLogin {
    /// IdP base URL.
    #[arg(long)]
    pub idp: String,
    #[arg(long)]
    pub login: String,
    /// IdP account password; prompted for when absent.
    #[arg(long, env = "ELPASSO_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Create a new keystore for this device.
    Init {
        /// Device name registered with IdPs; random when absent.
        #[arg(long)]
        device_id: Option<String>,
    },
    /// Obtain or refresh a credential from an IdP.
    FetchCredential {
        #[command(flatten)]
        idp: IdpLogin,
        /// Comma-separated info attributes to include.
        #[arg(long, value_delimiter = ',')]
        info: Vec<String>,
        /// Bind this device's secret into the credential.
        #[arg(long = "2fa")]
        two_fa: bool,
    },
    /// Sign on to a relying party.
    Signon {
        /// RP base URL.
        #[arg(long)]
        rp: String,
        /// Credential to use, by IdP URL; needed when several are stored.
        #[arg(long)]
        idp: Option<String>,
        /// Attributes to reveal, as `label` or `label=value`; comma-separated.
        #[arg(long, value_delimiter = ',')]
        disclose: Vec<String>,
        /// Sign on without creating or matching an account.
        #[arg(long)]
        guest: bool,
        #[arg(long = "2fa")]
        two_fa: bool,
    },
    /// Enroll this device under an existing account.
    AddDevice {
        #[command(flatten)]
        idp: IdpLogin,
        /// Short code shared with the approving device.
        #[arg(long)]
        salt: String,
        /// Seconds to wait for approval; 0 returns immediately.
        #[arg(long, default_value_t = 0)]
        wait: u64,
    },
    /// Approve a pending enrollment from a device that holds the secret.
    ApproveDevice {
        #[command(flatten)]
        idp: IdpLogin,
        #[arg(long)]
        device: String,
        /// Fingerprint displayed by the new device.
        #[arg(long)]
        fingerprint: String,
        #[arg(long)]
        salt: String,
    },
    /// Replace the user secret and move RP accounts to it.
    Rotate {
        #[command(flatten)]
        idp: IdpLogin,
        /// RPs whose accounts move to the new secret.
        #[arg(long)]
        rp: Vec<String>,
    },
    /// Revoke a lost or stolen device at the IdP.
    ReportStolen {
        #[command(flatten)]
        idp: IdpLogin,
        #[arg(long)]
        device: String,
    },
    /// Show the device id and stored credentials.
    Status,
}

fn default_keystore() -> PathBuf {
    let home = std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_default();
    home.join(".elpasso").join("keystore.json")
}

fn run(cli: Cli) -> Result<Value, CliError> {
    let path = cli.keystore.unwrap_or_else(default_keystore);
    let ctx = commands::Context::new(path);
    match cli.command {
        Command::Init { device_id } => ctx.init(device_id),
        Command::FetchCredential { idp, info, two_fa } => ctx.fetch_credential(&idp, &info, two_fa),
        Command::Signon {
            rp,
            idp,
            disclose,
            guest,
            two_fa,
        } => ctx.signon(&rp, idp.as_deref(), &disclose, guest, two_fa),
        Command::AddDevice { idp, salt, wait } => ctx.add_device(&idp, &salt, wait),
        Command::ApproveDevice {
            idp,
            device,
            fingerprint,
            salt,
        } => ctx.approve_device(&idp, &device, &fingerprint, &salt),
        Command::Rotate { idp, rp } => ctx.rotate(&idp, &rp),
        Command::ReportStolen { idp, device } => ctx.report_stolen(&idp, &device),
        Command::Status => ctx.status(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(v) => {
            if json {
                println!("{v}");
            } else {
                print!("{}", commands::render(&v));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                println!(
                    "{}",
                    serde_json::json!({"ok": false, "error": e.kind(), "message": e.to_string()})
                );
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
