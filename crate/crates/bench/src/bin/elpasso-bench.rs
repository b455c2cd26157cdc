use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use elpasso_bench::report::reference;
use elpasso_bench::throughput::{self, Endpoint, Target, ThroughputConfig};
use elpasso_bench::{phases, sweep, BenchReport, PhaseConfig};

#[derive(Parser)]
#[command(
    name = "elpasso-bench",
    version,
    about = "Protocol phase timing and service throughput"
)]
struct Cli {
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Timing {
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Bind a device secret into the credential.
    #[arg(long = "2fa")]
    two_fa: bool,
    /// Sign on without a retrieval token.
    #[arg(long)]
    no_retrieval: bool,
}

impl Timing {
    fn config(self, attributes: usize, disclosed: Option<usize>) -> PhaseConfig {
        PhaseConfig {
            attributes,
            disclosed,
            two_fa: self.two_fa,
            retrieval: !self.no_retrieval,
            iterations: self.iterations,
            warmup: self.warmup,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Attributes,
    Hidden,
}

#[derive(Args)]
struct Remote {
    /// IdP base URL; an in-process deployment is started when absent.
    #[arg(long, requires_all = ["rp", "login", "password"])]
    idp: Option<String>,
    #[arg(long)]
    rp: Option<String>,
    #[arg(long)]
    login: Option<String>,
    #[arg(long, env = "ELPASSO_BENCH_PASSWORD", hide_env_values = true)]
    password: Option<String>,
    #[arg(long, default_value = "bench-device")]
    device: String,
    /// Server worker threads for the in-process deployment.
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Time each protocol phase without a network.
    Phases {
        /// Total attributes in the credential.
        #[arg(long, default_value_t = 3)]
        attrs: usize,
        /// Info attributes to disclose; all by default.
        #[arg(long)]
        disclose: Option<usize>,
        #[command(flatten)]
        timing: Timing,
    },
    /// Sweep attribute count or hidden count.
    Sweep {
        #[arg(long, value_enum, default_value = "attributes")]
        kind: SweepArg,
        /// Attribute counts for the attribute sweep.
        #[arg(long, value_delimiter = ',', default_value = "3,5,8,13")]
        counts: Vec<usize>,
        /// Attribute count for the hidden sweep.
        #[arg(long, default_value_t = 12)]
        attrs: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        timing: Timing,
    },
    /// Closed-loop throughput against an IdP or RP.
    Throughput {
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long, default_value_t = 200)]
        requests: usize,
        #[arg(long, default_value_t = 0)]
        rtt_ms: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        remote: Remote,
    },
    /// Phases at 3 attributes, both sweeps and throughput for both targets.
    All {
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long, default_value_t = 100)]
        requests: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,4")]
        concurrency: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn endpoint(remote: &Remote) -> anyhow::Result<(Option<elpasso_service::local::Local>, Endpoint)> {
    match &remote.idp {
        Some(idp) => Ok((
            None,
            Endpoint {
                idp_url: idp.clone(),
                rp_url: remote.rp.clone().expect("required by clap"),
                login: remote.login.clone().expect("required by clap"),
                password: remote.password.clone().expect("required by clap"),
                device: remote.device.clone(),
            },
        )),
        None => {
            let (l, ep) = throughput::start_local(remote.workers)?;
            Ok((Some(l), ep))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<serde_json::Value> {
    Ok(match cmd {
        Command::Phases {
            attrs,
            disclose,
            timing,
        } => serde_json::to_value(phases::run(&timing.config(attrs, disclose))?)?,
        Command::Sweep {
            kind,
            counts,
            attrs,
            csv,
            timing,
        } => {
            let s = match kind {
                SweepArg::Attributes => sweep::attributes(&counts, &timing.config(3, None))?,
                SweepArg::Hidden => sweep::hidden(attrs, &timing.config(attrs, None))?,
            };
            if let Some(path) = csv {
                s.write_csv(
                    File::create(&path).with_context(|| format!("creating {}", path.display()))?,
                )?;
            }
            serde_json::to_value(s)?
        }
        Command::Throughput {
            target,
            concurrency,
            requests,
            rtt_ms,
            seed,
            remote,
        } => {
            let (_local, ep) = endpoint(&remote)?;
            let r = throughput::run(
                &ep,
                &ThroughputConfig {
                    target,
                    concurrency,
                    requests,
                    rtt_ms,
                    seed,
                },
            )?;
            serde_json::to_value(r)?
        }
        Command::All {
            iterations,
            requests,
            concurrency,
            seed,
        } => {
            let timing = Timing {
                iterations,
                warmup: 2,
                seed,
                two_fa: false,
                no_retrieval: false,
            };
            let mut report = BenchReport::new(seed);
            report.phases.push(phases::run(&timing.config(3, None))?);
            report
                .sweeps
                .push(sweep::attributes(&[3, 5, 8, 13], &timing.config(3, None))?);
            report
                .sweeps
                .push(sweep::hidden(12, &timing.config(12, None))?);
            let workers = concurrency.iter().copied().max().unwrap_or(1);
            let (_local, ep) = throughput::start_local(workers)?;
            for &k in &concurrency {
                for target in [Target::Idp, Target::Rp] {
                    report.throughput.push(throughput::run(
                        &ep,
                        &ThroughputConfig {
                            target,
                            concurrency: k,
                            requests,
                            rtt_ms: 0,
                            seed,
                        },
                    )?);
                }
            }
            let mut v = serde_json::to_value(report)?;
            v["reference"] = serde_json::json!({
                "idp_ops_per_sec": reference::IDP_OPS_PER_SEC,
                "rp_ops_per_sec": reference::RP_OPS_PER_SEC,
                "sign_on_request_bytes": reference::SIGN_ON_REQUEST_BYTES,
            });
            v
        }
    })
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let v = run(cli.command)?;
    let text = serde_json::to_string_pretty(&v)?;
    match cli.out {
        Some(path) => std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => writeln!(io::stdout(), "{text}")?,
    }
    Ok(())
}
