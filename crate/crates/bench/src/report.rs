//! The combined report written by the `all` command.

use serde::{Deserialize, Serialize};

use crate::phases::PhaseReport;
use crate::sweep::Sweep;
use crate::throughput::ThroughputReport;

/// Published figures of the reference deployment, used only for ratios in reports.
pub mod reference {
    /// Setup-phase requests per second at the IdP.
    pub const IDP_OPS_PER_SEC: f64 = 272.0;
    /// Sign-on requests per second at the RP.
    pub const RP_OPS_PER_SEC: f64 = 169.0;
    /// Sign-on request size in bytes.
    pub const SIGN_ON_REQUEST_BYTES: usize = 512;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Environment {
    pub curve: String,
    pub cpus: usize,
    pub profile: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            curve: "BLS12-381".into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            profile: if cfg!(debug_assertions) {
                "debug"
            } else {
                "release"
            }
            .into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub environment: Environment,
    pub phases: Vec<PhaseReport>,
    pub sweeps: Vec<Sweep>,
    pub throughput: Vec<ThroughputReport>,
}

impl BenchReport {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            environment: Environment::current(),
            phases: vec![],
            sweeps: vec![],
            throughput: vec![],
        }
    }
}
