//! CPU time of each protocol phase in isolation, with the message sizes it produces.

use elpasso_core::protocol::{
    prove_id, Disclosure, SignOnFlags, UserRecord, UserSecrets, SECONDS_PER_DAY,
};
use elpasso_core::wire::Envelope;
use serde::{Deserialize, Serialize};

use crate::fixture::Fixture;
use crate::stats::{cpu_timed, Stats};

/// Fixed clock so that expiry days, and therefore sizes, never depend on the run date.
pub const BENCH_NOW: u64 = 20_000 * SECONDS_PER_DAY + 12 * 3_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// Total attributes in the credential, fixed slots included.
    pub attributes: usize,
    /// Info attributes revealed at sign-on; `None` reveals all of them.
    pub disclosed: Option<usize>,
    pub two_fa: bool,
    pub retrieval: bool,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            attributes: 3,
            disclosed: None,
            two_fa: false,
            retrieval: true,
            iterations: 20,
            warmup: 2,
            seed: 1,
        }
    }
}

impl PhaseConfig {
    pub fn fixed_slots(&self) -> usize {
        3 + self.two_fa as usize
    }

    pub fn info(&self) -> anyhow::Result<usize> {
        self.attributes
            .checked_sub(self.fixed_slots())
            .ok_or_else(|| {
                anyhow::anyhow!(
                    "{} attributes is below the {} fixed slots",
                    self.attributes,
                    self.fixed_slots()
                )
            })
    }

    /// Attributes proven in zero knowledge at sign-on: the secrets, γ and undisclosed info.
    pub fn hidden(&self) -> anyhow::Result<usize> {
        let info = self.info()?;
        let shown = self.disclosed.unwrap_or(info).min(info);
        Ok(self.fixed_slots() - 1 + info - shown)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub request_id: Stats,
    pub provide_id: Stats,
    pub unblind_id: Stats,
    pub prove_id: Stats,
    pub verify_id: Stats,
    /// ProveID plus VerifyID, per iteration.
    pub sign_on_total: Stats,
    /// RequestID, ProvideID and UnblindID, per iteration.
    pub setup_total: Stats,
}

/// Encoded bytes per message type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadSizes {
    pub idp_public_key: usize,
    pub request_id: usize,
    pub blinded_credential: usize,
    pub sign_on_request: usize,
    pub sign_on_result: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub config: PhaseConfig,
    pub hidden: usize,
    pub times: PhaseTimes,
    /// Absent when no iteration ran.
    pub payloads: Option<PayloadSizes>,
}

/// One configuration's state between iterations, so sweeps can interleave configurations.
pub struct PhaseRunner {
    cfg: PhaseConfig,
    hidden: usize,
    fx: Fixture,
    user: UserRecord,
    secrets: UserSecrets,
    disclose: Vec<Disclosure>,
    flags: SignOnFlags,
    samples: [Vec<f64>; 5],
    payloads: Option<PayloadSizes>,
}

impl PhaseRunner {
    pub fn new(cfg: &PhaseConfig) -> anyhow::Result<Self> {
        let info = cfg.info()?;
        let hidden = cfg.hidden()?;
        let mut fx = Fixture::new(info, cfg.two_fa, cfg.seed);
        let disclose = fx.disclosures(cfg.disclosed.unwrap_or(info));
        let user = fx.user("bench");
        let secrets = fx.secrets();
        Ok(Self {
            cfg: *cfg,
            hidden,
            fx,
            user,
            secrets,
            disclose,
            flags: SignOnFlags {
                retrieval: cfg.retrieval,
                two_fa: cfg.two_fa,
                ..SignOnFlags::default()
            },
            samples: Default::default(),
            payloads: None,
        })
    }

    /// Runs every phase once; the times are kept unless `record` is false.
    pub fn step(&mut self, record: bool) -> anyhow::Result<()> {
        let fx = &mut self.fx;
        let ((d, req), t_req) = cpu_timed(|| fx.request(&self.secrets));
        let (blinded, t_provide) = cpu_timed(|| fx.provide(&self.user, &req, BENCH_NOW));
        let (bundle, t_unblind) = cpu_timed(|| fx.unblind(&d, &self.secrets, &blinded));
        let mut session = fx.session(BENCH_NOW);
        if !self.cfg.retrieval {
            session.authority_key = None;
        }
        let (signon, t_prove) = cpu_timed(|| {
            prove_id(
                &fx.params,
                &fx.kp.pk,
                &bundle,
                &self.secrets,
                &session,
                &self.disclose,
                self.flags,
                BENCH_NOW,
                &mut fx.rng,
            )
        });
        let signon = signon?;
        let (result, t_verify) = cpu_timed(|| fx.verify(&signon, BENCH_NOW));
        anyhow::ensure!(result.accepted, "sign-on rejected: {:?}", result.reason);
        if !record {
            return Ok(());
        }
        for (s, t) in self
            .samples
            .iter_mut()
            .zip([t_req, t_provide, t_unblind, t_prove, t_verify])
        {
            s.push(t);
        }
        self.payloads.get_or_insert(PayloadSizes {
            idp_public_key: fx.kp.pk.to_bytes().len(),
            request_id: req.encode().len(),
            blinded_credential: blinded.encode().len(),
            sign_on_request: signon.encode().len(),
            sign_on_result: result.encode().len(),
        });
        Ok(())
    }

    pub fn report(&self) -> PhaseReport {
        let s = &self.samples;
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        PhaseReport {
            config: self.cfg,
            hidden: self.hidden,
            times: PhaseTimes {
                request_id: Stats::of(&s[0]),
                provide_id: Stats::of(&s[1]),
                unblind_id: Stats::of(&s[2]),
                prove_id: Stats::of(&s[3]),
                verify_id: Stats::of(&s[4]),
                sign_on_total: Stats::of(&sum(&s[3], &s[4])),
                setup_total: Stats::of(&sum(&sum(&s[0], &s[1]), &s[2])),
            },
            payloads: self.payloads,
        }
    }
}

/// Runs several configurations with their iterations interleaved, so that drift
/// in machine speed affects all of them alike.
pub fn run_interleaved(cfgs: &[PhaseConfig]) -> anyhow::Result<Vec<PhaseReport>> {
    let mut runners = cfgs
        .iter()
        .map(PhaseRunner::new)
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rounds = cfgs
        .iter()
        .map(|c| c.warmup + c.iterations)
        .max()
        .unwrap_or(0);
    for i in 0..rounds {
        for r in runners.iter_mut() {
            if i < r.cfg.warmup + r.cfg.iterations {
                r.step(i >= r.cfg.warmup)?;
            }
        }
    }
    Ok(runners.iter().map(PhaseRunner::report).collect())
}

pub fn run(cfg: &PhaseConfig) -> anyhow::Result<PhaseReport> {
    Ok(run_interleaved(std::slice::from_ref(cfg))?.remove(0))
}
