//! Per-step regret records and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::Pair;
use crate::preference::FitDiagnostics;

/// Column order of trace files.
pub const TRACE_HEADER: &str = "run_id,t,round,x_idx,xp_idx,y,inst_regret,cum_regret,avg_regret";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based query index.
    pub t: usize,
    /// 1-based round; 0 for algorithms without rounds.
    pub round: usize,
    pub pair: Pair,
    pub y: bool,
    /// Posterior variance of the queried pair just before it was queried.
    pub variance: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub avg_regret: f64,
}

/// What happened in one completed MR-LPF round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub kappa: f64,
    pub rho: f64,
    pub beta: f64,
    pub pairs: Vec<Pair>,
    /// `σ²_{(n-1,r)}(z_n)` for every query of the round.
    pub selected_variances: Vec<f64>,
    /// `½ log det(I + K/ρ)` of the round's pairs.
    pub info_gain: f64,
    /// Largest end-of-round variance over the round's candidate pairs.
    pub end_max_variance: f64,
    pub candidates_before: Vec<usize>,
    pub candidates_after: Vec<usize>,
    pub used_fallback: bool,
    /// End-of-round fit; `None` for the final round, which stops at the
    /// budget before fitting.
    pub fit: Option<FitDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub algorithm: String,
    pub steps: Vec<StepRecord>,
    pub rounds: Vec<RoundRecord>,
    pub final_candidates: Vec<usize>,
    /// Whether the warm-round curvature assumption was licensed for this
    /// horizon; `None` when not checked.
    pub warm_start_licensed: Option<bool>,
}

impl RegretTrace {
    pub fn new(algorithm: impl Into<String>) -> Self {
        RegretTrace {
            algorithm: algorithm.into(),
            steps: Vec::new(),
            rounds: Vec::new(),
            final_candidates: Vec::new(),
            warm_start_licensed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends a step, maintaining cumulative and average regret.
    pub fn record(&mut self, round: usize, pair: Pair, y: bool, variance: f64, inst_regret: f64) {
        let t = self.steps.len() + 1;
        let cum = self.steps.last().map_or(0.0, |s| s.cum_regret) + inst_regret;
        self.steps.push(StepRecord {
            t,
            round,
            pair,
            y,
            variance,
            inst_regret,
            cum_regret: cum,
            avg_regret: cum / t as f64,
        });
    }

    pub fn avg_regret_at(&self, t: usize) -> Option<f64> {
        self.steps.get(t.checked_sub(1)?).map(|s| s.avg_regret)
    }

    pub fn write_csv<W: Write>(&self, run_id: usize, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                run_id,
                s.t,
                s.round,
                s.pair.first,
                s.pair.second,
                u8::from(s.y),
                s.inst_regret,
                s.cum_regret,
                s.avg_regret
            )?;
        }
        Ok(())
    }
}
