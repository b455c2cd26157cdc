//! Attribute-count and hidden-count sweeps with a linear fit over sign-on CPU time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::phases::{self, PhaseConfig, PhaseReport};
use crate::stats::{LinearFit, Stats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Attributes,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Attribute count or hidden count, depending on the sweep.
    pub x: usize,
    pub attributes: usize,
    pub hidden: usize,
    pub prove_id: Stats,
    pub verify_id: Stats,
    pub sign_on_total: Stats,
    pub setup_total: Stats,
    pub sign_on_request_bytes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
    /// Median ProveID+VerifyID seconds against `x`.
    pub fit: Option<LinearFit>,
}

fn row(x: usize, r: PhaseReport) -> SweepRow {
    SweepRow {
        x,
        attributes: r.config.attributes,
        hidden: r.hidden,
        prove_id: r.times.prove_id,
        verify_id: r.times.verify_id,
        sign_on_total: r.times.sign_on_total,
        setup_total: r.times.setup_total,
        sign_on_request_bytes: r.payloads.map(|p| p.sign_on_request),
    }
}

fn finish(kind: SweepKind, rows: Vec<SweepRow>) -> Sweep {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.sign_on_total.median.map(|y| (r.x as f64, y)))
        .collect();
    Sweep {
        kind,
        fit: LinearFit::of(&points),
        rows,
    }
}

/// One row per attribute count; every info attribute stays hidden, the costlier case.
pub fn attributes(counts: &[usize], base: &PhaseConfig) -> anyhow::Result<Sweep> {
    let cfgs: Vec<PhaseConfig> = counts
        .iter()
        .map(|&n| PhaseConfig {
            attributes: n,
            disclosed: Some(0),
            ..*base
        })
        .collect();
    let rows = phases::run_interleaved(&cfgs)?
        .into_iter()
        .map(|r| row(r.config.attributes, r))
        .collect();
    Ok(finish(SweepKind::Attributes, rows))
}

/// One row per hidden count at a fixed attribute count, hiding info attributes one at a time.
pub fn hidden(attributes: usize, base: &PhaseConfig) -> anyhow::Result<Sweep> {
    let cfg = PhaseConfig {
        attributes,
        ..*base
    };
    let info = cfg.info()?;
    let cfgs: Vec<PhaseConfig> = (0..=info)
        .rev()
        .map(|shown| PhaseConfig {
            disclosed: Some(shown),
            ..cfg
        })
        .collect();
    let rows = phases::run_interleaved(&cfgs)?
        .into_iter()
        .map(|r| row(r.hidden, r))
        .collect();
    Ok(finish(SweepKind::Hidden, rows))
}

impl Sweep {
    /// One CSV line per row, times in milliseconds.
    pub fn write_csv<W: Write>(&self, w: W) -> anyhow::Result<()> {
        let ms = |s: Option<f64>| s.map(|v| format!("{:.4}", v * 1e3)).unwrap_or_default();
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "x",
            "attributes",
            "hidden",
            "iterations",
            "prove_id_mean_ms",
            "prove_id_stdev_ms",
            "verify_id_mean_ms",
            "verify_id_stdev_ms",
            "sign_on_median_ms",
            "setup_mean_ms",
            "sign_on_request_bytes",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.x.to_string(),
                r.attributes.to_string(),
                r.hidden.to_string(),
                r.prove_id.n.to_string(),
                ms(r.prove_id.mean),
                ms(r.prove_id.stdev),
                ms(r.verify_id.mean),
                ms(r.verify_id.stdev),
                ms(r.sign_on_total.median),
                ms(r.setup_total.mean),
                r.sign_on_request_bytes
                    .map(|b| b.to_string())
                    .unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
