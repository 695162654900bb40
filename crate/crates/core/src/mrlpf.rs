//! Multi-round learning from preference feedback.
//!
//! The horizon is split into rounds of growing length. Inside a round the
//! learner queries the maximum-variance pair among the surviving actions,
//! using only that round's observations. At the end of the round it fits the
//! preference function once and drops every action `x` for which some rival
//! `x'` has `μ(h(x, x')) + β σ(x, x') < 1/2`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::PreferenceEnv;
use crate::error::{Error, Result};
use crate::gram::{info_gain, PairPosterior};
use crate::kernel::{ActionKernel, Pair};
use crate::maxminlcb::check_env;
use crate::policy::{drive, PairPolicy};
use crate::preference::{fit, sigmoid, FitConfig, PosteriorState, PreferenceHistory};
use crate::trace::{RegretTrace, RoundRecord};

/// Curvature constant used for every round after the first.
pub const WARM_ROUND_KAPPA: f64 = 6.0;

fn ceil_sqrt(n: u64) -> u64 {
    let s = n.isqrt();
    if s * s == n {
        s
    } else {
        s + 1
    }
}

/// Round lengths `N_1 = ⌈√T⌉`, `N_r = ⌈√(N_{r-1} T)⌉`, with the last round
/// truncated so the lengths sum to `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub horizon: usize,
    pub sizes: Vec<usize>,
}

impl RoundSchedule {
    pub fn num_rounds(&self) -> usize {
        self.sizes.len()
    }

    /// `t_r`, the query index at which round `r` ends.
    pub fn boundaries(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .scan(0, |acc, &n| {
                *acc += n;
                Some(*acc)
            })
            .collect()
    }

    /// `⌈log₂ log₂ T⌉ + 1`, the round-count bound for `T ≥ 4`.
    pub fn round_bound(horizon: usize) -> usize {
        let ll = (horizon as f64).log2().log2();
        ll.ceil().max(0.0) as usize + 1
    }
}

pub fn build_schedule(horizon: usize) -> Result<RoundSchedule> {
    if horizon < 2 {
        return Err(Error::InvalidInput(format!(
            "horizon must be >= 2, got {horizon}"
        )));
    }
    let t = horizon as u64;
    let mut sizes = vec![ceil_sqrt(t) as usize];
    let mut used = sizes[0];
    while used < horizon {
        let prev = *sizes.last().unwrap() as u64;
        let next = (ceil_sqrt(prev * t) as usize).min(horizon - used);
        sizes.push(next);
        used += next;
    }
    Ok(RoundSchedule { horizon, sizes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BetaMode {
    /// `β_r = L (B + √((κ_r/λ) log(2R|X|/δ)))`.
    Theoretical,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrlpfConfig {
    pub horizon: usize,
    pub delta: f64,
    /// RKHS norm bound of the utility.
    pub b: f64,
    /// Link-derivative bound used in the theoretical width.
    pub l: f64,
    pub beta: BetaMode,
    /// Curvature constant for the first round.
    pub kappa1: f64,
    /// Curvature constant for later rounds.
    pub kappa_rest: f64,
    pub fit: FitConfig,
    /// Evaluate the warm-round diagnostic at construction.
    pub check_warm_start: bool,
}

impl MrlpfConfig {
    pub fn new(horizon: usize, fit: FitConfig, beta: BetaMode, kappa1: f64) -> Self {
        MrlpfConfig {
            horizon,
            delta: 0.05,
            b: 1.0,
            l: 0.25,
            beta,
            kappa1,
            kappa_rest: WARM_ROUND_KAPPA,
            fit,
            check_warm_start: false,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.fit.lambda
    }

    pub fn kappa_for_round(&self, r: usize) -> f64 {
        if r <= 1 {
            self.kappa1
        } else {
            self.kappa_rest
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidInput(format!(
                "horizon must be >= 2, got {}",
                self.horizon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.kappa1 >= 4.0 && self.kappa_rest >= 4.0) {
            return Err(Error::InvalidInput(
                "curvature constants must be >= 4".into(),
            ));
        }
        match self.beta {
            BetaMode::Fixed(b) if !(b >= 0.0) => {
                return Err(Error::InvalidInput(format!(
                    "fixed beta must be >= 0, got {b}"
                )))
            }
            BetaMode::Theoretical => {
                if !(self.b > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "B must be positive, got {}",
                        self.b
                    )));
                }
                if !(self.l > 0.0 && self.l <= 0.25) {
                    return Err(Error::InvalidInput(format!(
                        "L must lie in (0, 1/4], got {}",
                        self.l
                    )));
                }
            }
            _ => {}
        }
        self.fit.validate()
    }
}

/// Confidence multiplier for round `r` (1-based) out of `num_rounds`.
pub fn beta_r(
    config: &MrlpfConfig,
    r: usize,
    num_rounds: usize,
    num_actions: usize,
) -> Result<f64> {
    if r == 0 || r > num_rounds || num_actions == 0 {
        return Err(Error::InvalidInput(format!(
            "round {r} of {num_rounds} over {num_actions} actions"
        )));
    }
    match config.beta {
        BetaMode::Fixed(b) => Ok(b),
        BetaMode::Theoretical => {
            let kappa = config.kappa_for_round(r);
            let log_term = (2.0 * num_rounds as f64 * num_actions as f64 / config.delta).ln();
            Ok(config.l * (config.b + (kappa / config.lambda() * log_term).sqrt()))
        }
    }
}

/// Surviving actions `M_r`, kept in ascending index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub active: Vec<usize>,
    pub round: usize,
}

impl CandidateSet {
    pub fn all(num_actions: usize) -> Self {
        CandidateSet {
            active: (0..num_actions).collect(),
            round: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.active.binary_search(&x).is_ok()
    }
}

/// Maximum-variance pair over `M_r × M_r`, lexicographic tie-break.
pub fn select_pair(posterior: &PairPosterior, candidates: &CandidateSet) -> Result<Pair> {
    Ok(posterior.max_variance_pair(&candidates.active)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elimination {
    pub kept: CandidateSet,
    /// `min_{x' ≠ x} μ(h(x, x')) + β σ(x, x')` for every candidate, in order.
    pub min_ucb: Vec<(usize, f64)>,
    pub used_fallback: bool,
}

/// Smallest upper confidence bound on `P(x ≻ x')` over rivals `x' ≠ x` in
/// the candidate set. A lone candidate scores 1/2.
pub fn min_ucb_scores(
    candidates: &[usize],
    scores: &[f64],
    posterior: &PairPosterior,
    beta: f64,
) -> Result<Vec<(usize, f64)>> {
    candidates
        .iter()
        .map(|&x| {
            let mut worst = f64::INFINITY;
            for &xp in candidates {
                if xp == x {
                    continue;
                }
                let sd = posterior.std_dev(Pair::new(x, xp))?;
                let ucb = sigmoid(scores[x] - scores[xp]) + beta * sd;
                worst = worst.min(ucb);
            }
            Ok((x, if worst.is_finite() { worst } else { 0.5 }))
        })
        .collect()
}

/// Applies the end-of-round elimination rule. If the rule would remove every
/// action, the one with the largest minimum UCB survives.
pub fn eliminate(
    candidates: &CandidateSet,
    state: &PosteriorState,
    posterior: &PairPosterior,
    beta: f64,
) -> Result<Elimination> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "beta must be >= 0, got {beta}"
        )));
    }
    let scores = state.action_scores(posterior.kernel());
    let min_ucb = min_ucb_scores(&candidates.active, &scores, posterior, beta)?;
    let mut kept: Vec<usize> = min_ucb
        .iter()
        .filter(|(_, u)| *u >= 0.5)
        .map(|(x, _)| *x)
        .collect();
    let mut used_fallback = false;
    if kept.is_empty() {
        let mut best = min_ucb[0];
        for &(x, u) in &min_ucb[1..] {
            if u > best.1 {
                best = (x, u);
            }
        }
        kept.push(best.0);
        used_fallback = true;
    }
    Ok(Elimination {
        kept: CandidateSet {
            active: kept,
            round: candidates.round + 1,
        },
        min_ucb,
        used_fallback,
    })
}

/// Result of the warm-round diagnostic: whether
/// `2 β_1 √(8 / log(1 + 4/(λκ))) √(Γ(N_1) / N_1) ≤ 1/4` at this horizon,
/// with `Γ` estimated greedily.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartCheck {
    pub first_round: usize,
    pub info_gain: f64,
    pub lhs: f64,
    pub licensed: bool,
}

fn greedy_gain_prefix(kernel: &Arc<ActionKernel>, steps: usize, rho: f64) -> Result<Vec<f64>> {
    let mut post = PairPosterior::new(Arc::clone(kernel), rho)?;
    let all: Vec<usize> = (0..kernel.num_actions()).collect();
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for _ in 0..steps {
        let (pair, var) = post.max_variance_pair(&all)?;
        acc += 0.5 * (var / rho).ln_1p();
        post.append(pair)?;
        out.push(acc);
    }
    Ok(out)
}

fn warm_lhs(beta1: f64, rho: f64, gain: f64, n1: usize) -> f64 {
    2.0 * beta1 * (8.0 / (4.0 / rho).ln_1p()).sqrt() * (gain / n1 as f64).sqrt()
}

pub fn warm_start_check(
    kernel: &Arc<ActionKernel>,
    beta1: f64,
    lambda: f64,
    kappa1: f64,
    horizon: usize,
) -> Result<WarmStartCheck> {
    let n1 = ceil_sqrt(horizon as u64) as usize;
    let rho = lambda * kappa1;
    let gain = *greedy_gain_prefix(kernel, n1, rho)?.last().unwrap();
    let lhs = warm_lhs(beta1, rho, gain, n1);
    Ok(WarmStartCheck {
        first_round: n1,
        info_gain: gain,
        lhs,
        licensed: lhs <= 0.25,
    })
}

/// Smallest horizon up to `max_horizon` at which the warm-round condition
/// holds, if any.
pub fn smallest_licensed_horizon(
    kernel: &Arc<ActionKernel>,
    beta1: f64,
    lambda: f64,
    kappa1: f64,
    max_horizon: usize,
) -> Result<Option<usize>> {
    let rho = lambda * kappa1;
    let max_n1 = ceil_sqrt(max_horizon as u64) as usize;
    let gains = greedy_gain_prefix(kernel, max_n1, rho)?;
    for horizon in 2..=max_horizon {
        let n1 = ceil_sqrt(horizon as u64) as usize;
        if warm_lhs(beta1, rho, gains[n1], n1) <= 0.25 {
            return Ok(Some(horizon));
        }
    }
    Ok(None)
}

/// Resumable MR-LPF run: one pending pair at a time.
#[derive(Debug, Clone)]
pub struct MrlpfRunner {
    kernel: Arc<ActionKernel>,
    config: MrlpfConfig,
    schedule: RoundSchedule,
    betas: Vec<f64>,
    round: usize,
    step_in_round: usize,
    t: usize,
    candidates: CandidateSet,
    posterior: PairPosterior,
    history: PreferenceHistory,
    round_variances: Vec<f64>,
    pending: Option<(Pair, f64)>,
    last_fit: Option<(PosteriorState, f64)>,
    last_posterior: Option<PairPosterior>,
    rounds: Vec<RoundRecord>,
    warm_start: Option<WarmStartCheck>,
}

impl MrlpfRunner {
    pub fn new(kernel: Arc<ActionKernel>, config: MrlpfConfig) -> Result<Self> {
        config.validate()?;
        let schedule = build_schedule(config.horizon)?;
        let n_actions = kernel.num_actions();
        let r_total = schedule.num_rounds();
        let betas = (1..=r_total)
            .map(|r| beta_r(&config, r, r_total, n_actions))
            .collect::<Result<Vec<_>>>()?;
        let warm_start = if config.check_warm_start {
            Some(warm_start_check(
                &kernel,
                betas[0],
                config.lambda(),
                config.kappa1,
                config.horizon,
            )?)
        } else {
            None
        };
        let posterior = PairPosterior::new(Arc::clone(&kernel), config.lambda() * config.kappa1)?;
        let mut runner = MrlpfRunner {
            candidates: CandidateSet::all(n_actions),
            kernel,
            schedule,
            betas,
            round: 0,
            step_in_round: 0,
            t: 0,
            posterior,
            history: PreferenceHistory::new(),
            round_variances: Vec::new(),
            pending: None,
            last_fit: None,
            last_posterior: None,
            rounds: Vec::new(),
            warm_start,
            config,
        };
        runner.select()?;
        Ok(runner)
    }

    fn select(&mut self) -> Result<()> {
        self.pending = if self.t >= self.config.horizon {
            None
        } else {
            Some(self.posterior.max_variance_pair(&self.candidates.active)?)
        };
        Ok(())
    }

    /// Closes the current round. Every round but the last fits the window
    /// and eliminates; the last round ends the run mid-loop and does neither.
    fn end_round(&mut self) -> Result<()> {
        let r = self.round + 1;
        let is_last = r == self.schedule.num_rounds();
        let kappa = self.config.kappa_for_round(r);
        let beta = self.betas[self.round];

        let mut end_max_variance: f64 = 0.0;
        for &a in &self.candidates.active {
            for &b in &self.candidates.active {
                end_max_variance = end_max_variance.max(self.posterior.variance(Pair::new(a, b))?);
            }
        }
        let pairs: Vec<Pair> = self.history.pairs().collect();
        let gain = info_gain(&self.kernel, &pairs, self.posterior.rho())?;
        let mut record = RoundRecord {
            round: r,
            kappa,
            rho: self.posterior.rho(),
            beta,
            pairs,
            selected_variances: std::mem::take(&mut self.round_variances),
            info_gain: gain,
            end_max_variance,
            candidates_before: self.candidates.active.clone(),
            candidates_after: self.candidates.active.clone(),
            used_fallback: false,
            fit: None,
        };
        if is_last {
            self.rounds.push(record);
            return Ok(());
        }

        let state = fit(
            &self.history,
            self.posterior.gram(),
            &self.config.fit.with_kappa(kappa),
        )?;
        let elim = eliminate(&self.candidates, &state, &self.posterior, beta)?;
        record.candidates_after = elim.kept.active.clone();
        record.used_fallback = elim.used_fallback;
        record.fit = Some(state.diagnostics);
        self.rounds.push(record);

        self.candidates = elim.kept;
        self.last_fit = Some((state, beta));
        let next_rho = self.config.lambda() * self.config.kappa_for_round(r + 1);
        let fresh = PairPosterior::new(Arc::clone(&self.kernel), next_rho)?;
        self.last_posterior = Some(std::mem::replace(&mut self.posterior, fresh));
        self.history = PreferenceHistory::new();
        self.step_in_round = 0;
        self.round += 1;
        Ok(())
    }

    pub fn config(&self) -> &MrlpfConfig {
        &self.config
    }

    pub fn kernel(&self) -> &Arc<ActionKernel> {
        &self.kernel
    }

    pub fn schedule(&self) -> &RoundSchedule {
        &self.schedule
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn candidate_set(&self) -> &CandidateSet {
        &self.candidates
    }

    /// Observations gathered so far in the current round.
    pub fn step_in_round(&self) -> usize {
        self.step_in_round
    }

    pub fn current_history(&self) -> &PreferenceHistory {
        &self.history
    }

    pub fn current_posterior(&self) -> &PairPosterior {
        &self.posterior
    }

    /// Most recent end-of-round fit.
    pub fn last_fit(&self) -> Option<&PosteriorState> {
        self.last_fit.as_ref().map(|f| &f.0)
    }

    pub fn warm_start(&self) -> Option<&WarmStartCheck> {
        self.warm_start.as_ref()
    }

    /// `[M_1, M_2, ...]` as realized so far.
    pub fn candidate_trajectory(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::with_capacity(self.rounds.len() + 1);
        out.push((0..self.kernel.num_actions()).collect());
        out.extend(self.rounds.iter().map(|r| r.candidates_after.clone()));
        out
    }

    /// Per-survivor minimum UCB from the most recent end-of-round fit, or from
    /// the prior before any round has completed.
    pub fn survivor_scores(&self) -> Result<Vec<(usize, f64)>> {
        match (&self.last_fit, &self.last_posterior) {
            (Some((state, beta)), Some(post)) => {
                let beta = *beta;
                let scores = state.action_scores(&self.kernel);
                min_ucb_scores(&self.candidates.active, &scores, post, beta)
            }
            _ => {
                let prior = PairPosterior::new(Arc::clone(&self.kernel), self.posterior.rho())?;
                let zeros = vec![0.0; self.kernel.num_actions()];
                min_ucb_scores(&self.candidates.active, &zeros, &prior, self.betas[0])
            }
        }
    }

    /// `μ(h(x, x'))` among survivors from the latest fit (1/2 without one).
    pub fn survivor_preferences(&self) -> Vec<Vec<f64>> {
        let scores = self
            .last_fit
            .as_ref()
            .map(|s| s.0.action_scores(&self.kernel))
            .unwrap_or_else(|| vec![0.0; self.kernel.num_actions()]);
        let c = &self.candidates.active;
        c.iter()
            .map(|&a| c.iter().map(|&b| sigmoid(scores[a] - scores[b])).collect())
            .collect()
    }
}

impl PairPolicy for MrlpfRunner {
    fn name(&self) -> &'static str {
        "mrlpf"
    }

    fn pending(&self) -> Option<Pair> {
        self.pending.map(|p| p.0)
    }

    fn pending_variance(&self) -> f64 {
        self.pending.map_or(0.0, |p| p.1)
    }

    fn round(&self) -> usize {
        self.round + 1
    }

    fn submit(&mut self, y: bool) -> Result<()> {
        let (pair, var) = self
            .pending
            .ok_or_else(|| Error::InvalidInput("no pending pair; the run is finished".into()))?;
        self.history.push(pair, y);
        self.posterior.append(pair)?;
        self.round_variances.push(var);
        self.t += 1;
        self.step_in_round += 1;
        if self.step_in_round == self.schedule.sizes[self.round] {
            self.end_round()?;
        }
        self.select()
    }

    fn queries_made(&self) -> usize {
        self.t
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn candidates(&self) -> Vec<usize> {
        self.candidates.active.clone()
    }

    fn round_records(&self) -> &[RoundRecord] {
        &self.rounds
    }

    fn warm_start_licensed(&self) -> Option<bool> {
        self.warm_start.map(|w| w.licensed)
    }
}

pub fn run_mrlpf<E: PreferenceEnv + ?Sized>(
    env: &mut E,
    kernel: Arc<ActionKernel>,
    config: MrlpfConfig,
) -> Result<RegretTrace> {
    check_env(env.num_actions(), &kernel)?;
    let mut runner = MrlpfRunner::new(kernel, config)?;
    drive(&mut runner, env)
}
