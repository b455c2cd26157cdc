//! Measurement harness: per-phase CPU time, message sizes, attribute scaling and
//! closed-loop service throughput.

pub mod fixture;
pub mod phases;
pub mod report;
pub mod stats;
pub mod sweep;
pub mod throughput;

pub use phases::{PayloadSizes, PhaseConfig, PhaseReport};
pub use report::BenchReport;
pub use stats::{LinearFit, Stats};
pub use sweep::{Sweep, SweepKind};
pub use throughput::{Endpoint, Target, ThroughputConfig, ThroughputReport};
