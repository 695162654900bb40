//! Step-at-a-time query policies and the loop that drives them against an
//! environment.
//!
//! Both algorithms are written as resumable state machines so that the batch
//! harness and the interactive service share one code path.

use crate::env::PreferenceEnv;
use crate::error::{Error, Result};
use crate::kernel::Pair;
use crate::maxminlcb::MaxMinLcbRunner;
use crate::mrlpf::MrlpfRunner;
use crate::trace::{RegretTrace, RoundRecord};

pub trait PairPolicy {
    fn name(&self) -> &'static str;

    /// Pair awaiting feedback; `None` once the budget is spent.
    fn pending(&self) -> Option<Pair>;

    /// Posterior variance of the pending pair at selection time.
    fn pending_variance(&self) -> f64;

    /// Round of the pending query (0 when the policy has no rounds).
    fn round(&self) -> usize;

    /// Records feedback for the pending pair and advances.
    fn submit(&mut self, y: bool) -> Result<()>;

    fn queries_made(&self) -> usize;

    fn horizon(&self) -> usize;

    fn is_finished(&self) -> bool {
        self.pending().is_none()
    }

    /// Actions still considered plausible maximizers.
    fn candidates(&self) -> Vec<usize>;

    fn round_records(&self) -> &[RoundRecord] {
        &[]
    }

    fn warm_start_licensed(&self) -> Option<bool> {
        None
    }
}

/// Runs `policy` to completion against `env`, recording regret.
pub fn drive<P: PairPolicy + ?Sized, E: PreferenceEnv + ?Sized>(
    policy: &mut P,
    env: &mut E,
) -> Result<RegretTrace> {
    let mut trace = RegretTrace::new(policy.name());
    while let Some(pair) = policy.pending() {
        let step = policy.queries_made() + 1;
        let round = policy.round();
        let variance = policy.pending_variance();
        let y = env.query(pair).map_err(|e| match e {
            Error::Environment { .. } => e,
            other => Error::Environment {
                step,
                message: other.to_string(),
            },
        })?;
        policy.submit(y)?;
        trace.record(round, pair, y, variance, env.regret(pair));
    }
    trace.rounds = policy.round_records().to_vec();
    trace.final_candidates = policy.candidates();
    trace.warm_start_licensed = policy.warm_start_licensed();
    Ok(trace)
}

/// Either algorithm behind one type.
#[derive(Debug, Clone)]
pub enum AnyRunner {
    Mrlpf(Box<MrlpfRunner>),
    MaxMinLcb(Box<MaxMinLcbRunner>),
}

impl AnyRunner {
    fn inner(&self) -> &dyn PairPolicy {
        match self {
            AnyRunner::Mrlpf(r) => r.as_ref(),
            AnyRunner::MaxMinLcb(r) => r.as_ref(),
        }
    }

    fn inner_mut(&mut self) -> &mut dyn PairPolicy {
        match self {
            AnyRunner::Mrlpf(r) => r.as_mut(),
            AnyRunner::MaxMinLcb(r) => r.as_mut(),
        }
    }
}

impl PairPolicy for AnyRunner {
    fn name(&self) -> &'static str {
        self.inner().name()
    }
    fn pending(&self) -> Option<Pair> {
        self.inner().pending()
    }
    fn pending_variance(&self) -> f64 {
        self.inner().pending_variance()
    }
    fn round(&self) -> usize {
        self.inner().round()
    }
    fn submit(&mut self, y: bool) -> Result<()> {
        self.inner_mut().submit(y)
    }
    fn queries_made(&self) -> usize {
        self.inner().queries_made()
    }
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn candidates(&self) -> Vec<usize> {
        self.inner().candidates()
    }
    fn round_records(&self) -> &[RoundRecord] {
        self.inner().round_records()
    }
    fn warm_start_licensed(&self) -> Option<bool> {
        self.inner().warm_start_licensed()
    }
}
