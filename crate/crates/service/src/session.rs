//! One interactive optimization run with a human (or program) as the oracle.

use std::collections::HashSet;
use std::sync::Arc;

use prefbo_core::experiment::Algorithm;
use prefbo_core::gram::PairPosterior;
use prefbo_core::mrlpf::{build_schedule, min_ucb_scores};
use prefbo_core::preference::{kappa_bound, sigmoid};
use prefbo_core::{
    ActionKernel, ActionSet, AnyRunner, BetaMode, FitConfig, KernelFamily, KernelSpec,
    MaxMinLcbConfig, MaxMinLcbRunner, MrlpfConfig, MrlpfRunner, Pair, PairPolicy,
};

use crate::api::{
    ActionView, BetaKind, CreateResponse, CreateSession, FeedbackResponse, PendingPair, Report,
    SessionStatus, Snapshot, Survivor, Winner,
};
use crate::error::{ApiError, ApiResult};

/// Session size limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_actions: usize,
    pub max_horizon: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_actions: 1000,
            max_horizon: 5000,
        }
    }
}

pub const DEFAULT_BETA: f64 = 0.1;

type MinUcb = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    request: CreateSession,
    kernel: Arc<ActionKernel>,
    runner: AnyRunner,
    answered: HashSet<String>,
}

fn positive(field: &str, v: f64) -> ApiResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ApiError::invalid(
            field,
            format!("{field} must be a positive number, got {v}"),
        ))
    }
}

fn validate(req: &CreateSession, limits: &Limits) -> ApiResult<()> {
    let n = req.embeddings.len();
    if n == 0 {
        return Err(ApiError::invalid(
            "embeddings",
            "at least one action is required",
        ));
    }
    if n > limits.max_actions {
        return Err(ApiError::CapExceeded {
            what: "|X|",
            field: "embeddings",
            value: n,
            cap: limits.max_actions,
        });
    }
    if req.actions.len() != n {
        return Err(ApiError::invalid(
            "actions",
            format!(
                "{} action descriptors for {n} embeddings",
                req.actions.len()
            ),
        ));
    }
    let dim = req.embeddings[0].len();
    if dim == 0 {
        return Err(ApiError::invalid(
            "embeddings[0]",
            "embeddings must be non-empty",
        ));
    }
    for (i, e) in req.embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(ApiError::invalid(
                format!("embeddings[{i}]"),
                format!("dimension {} differs from {dim}", e.len()),
            ));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(ApiError::invalid(
                format!("embeddings[{i}]"),
                "non-finite coordinate",
            ));
        }
    }
    if req.horizon > limits.max_horizon {
        return Err(ApiError::CapExceeded {
            what: "T",
            field: "horizon",
            value: req.horizon,
            cap: limits.max_horizon,
        });
    }
    let min_horizon = match req.algorithm {
        Algorithm::Mrlpf => 2,
        Algorithm::MaxMinLcb => 1,
    };
    if req.horizon < min_horizon {
        return Err(ApiError::invalid(
            "horizon",
            format!("horizon must be >= {min_horizon}"),
        ));
    }
    positive("lengthscale", req.lengthscale)?;
    positive("lambda", req.lambda)?;
    if let Some(b) = req.beta {
        positive("beta", b)?;
    }
    if let Some(b) = req.b {
        positive("b", b)?;
    }
    if !(req.delta > 0.0 && req.delta < 1.0) {
        return Err(ApiError::invalid("delta", "delta must lie in (0, 1)"));
    }
    if !(req.l > 0.0 && req.l <= 0.25) {
        return Err(ApiError::invalid("l", "l must lie in (0, 1/4]"));
    }
    if let Some(k) = req.kappa {
        if !(k >= 4.0 && k.is_finite()) {
            return Err(ApiError::invalid("kappa", "kappa must be >= 4"));
        }
    }
    if let Some(lr) = req.learning_rate {
        positive("learning_rate", lr)?;
    }
    if req.max_iters == Some(0) {
        return Err(ApiError::invalid("max_iters", "max_iters must be >= 1"));
    }
    Ok(())
}

fn build_runner(req: &CreateSession, kernel: Arc<ActionKernel>) -> ApiResult<AnyRunner> {
    let mut fit = FitConfig {
        lambda: req.lambda,
        ..FitConfig::default()
    };
    if let Some(lr) = req.learning_rate {
        fit.learning_rate = lr;
    }
    if let Some(it) = req.max_iters {
        fit.max_iters = it;
    }
    let b = req.b.unwrap_or(1.0);
    let kappa = match req.kappa {
        Some(k) => k,
        None => kappa_bound(b)?,
    };
    let fixed = req.beta.unwrap_or(DEFAULT_BETA);
    Ok(match req.algorithm {
        Algorithm::Mrlpf => {
            let beta = match req.beta_mode {
                BetaKind::Fixed => BetaMode::Fixed(fixed),
                BetaKind::Theoretical => BetaMode::Theoretical,
            };
            let mut config = MrlpfConfig::new(req.horizon, fit, beta, kappa);
            config.delta = req.delta;
            config.b = b;
            config.l = req.l;
            AnyRunner::Mrlpf(Box::new(MrlpfRunner::new(kernel, config)?))
        }
        Algorithm::MaxMinLcb => {
            if req.beta_mode == BetaKind::Theoretical {
                return Err(ApiError::invalid(
                    "beta_mode",
                    "maxminlcb only supports a fixed beta",
                ));
            }
            let config = MaxMinLcbConfig::new(req.horizon, fixed, kappa, fit);
            AnyRunner::MaxMinLcb(Box::new(MaxMinLcbRunner::new(kernel, config)?))
        }
    })
}

impl Session {
    /// Validates `request` and selects the first pair.
    pub fn create(id: String, request: CreateSession, limits: &Limits) -> ApiResult<Self> {
        validate(&request, limits)?;
        let family = KernelFamily::parse(&request.kernel)
            .map_err(|e| ApiError::invalid("kernel", e.to_string()))?;
        let spec = KernelSpec::unit(family, request.lengthscale, request.embeddings[0].len())
            .map_err(|e| ApiError::invalid("lengthscale", e.to_string()))?;
        let actions = ActionSet::new(request.embeddings.clone())
            .map_err(|e| ApiError::invalid("embeddings", e.to_string()))?;
        let kernel = Arc::new(ActionKernel::new(spec, actions)?);
        let runner = build_runner(&request, Arc::clone(&kernel))?;
        Ok(Session {
            id,
            request,
            kernel,
            runner,
            answered: HashSet::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn request(&self) -> &CreateSession {
        &self.request
    }

    pub fn runner(&self) -> &AnyRunner {
        &self.runner
    }

    pub fn status(&self) -> SessionStatus {
        if self.runner.is_finished() {
            SessionStatus::Finished
        } else {
            SessionStatus::AwaitingFeedback
        }
    }

    fn schedule(&self) -> Vec<usize> {
        match self.request.algorithm {
            Algorithm::Mrlpf => build_schedule(self.request.horizon)
                .map(|s| s.sizes)
                .unwrap_or_default(),
            Algorithm::MaxMinLcb => Vec::new(),
        }
    }

    fn view(&self, idx: usize) -> ActionView {
        let d = &self.request.actions[idx];
        ActionView {
            idx,
            label: d.label.clone(),
            text: d.text.clone(),
        }
    }

    fn token(&self, t: usize, pair: Pair) -> String {
        format!("q{t}-{}-{}", pair.first, pair.second)
    }

    pub fn pending(&self) -> Option<PendingPair> {
        let pair = self.runner.pending()?;
        let t = self.runner.queries_made() + 1;
        Some(PendingPair {
            pair_token: self.token(t, pair),
            t,
            round: self.runner.round(),
            first: self.view(pair.first),
            second: self.view(pair.second),
        })
    }

    /// Records one answer. Fails with a conflict when the session is
    /// finished or the token does not name the pending pair.
    pub fn submit(&mut self, winner: Winner, pair_token: &str) -> ApiResult<()> {
        let Some(pending) = self.pending() else {
            return Err(ApiError::Conflict(
                "session is finished; no pair is pending".into(),
            ));
        };
        if pending.pair_token != pair_token {
            let why = if self.answered.contains(pair_token) {
                "feedback for this pair was already recorded"
            } else {
                "pair_token does not match the pending pair"
            };
            return Err(ApiError::Conflict(why.into()));
        }
        self.runner.submit(winner == Winner::First)?;
        self.answered.insert(pending.pair_token);
        Ok(())
    }

    /// Fitted per-action scores and the survivors' min-UCB values.
    fn scores(&self) -> ApiResult<(Vec<f64>, MinUcb)> {
        match &self.runner {
            AnyRunner::Mrlpf(r) => {
                let scores = r
                    .last_fit()
                    .map(|s| s.action_scores(&self.kernel))
                    .unwrap_or_else(|| vec![0.0; self.kernel.num_actions()]);
                Ok((scores, r.survivor_scores()?))
            }
            AnyRunner::MaxMinLcb(r) => {
                let scores = r.state().action_scores(&self.kernel);
                let all: Vec<usize> = (0..self.kernel.num_actions()).collect();
                let post: &PairPosterior = r.posterior();
                let ucb = min_ucb_scores(&all, &scores, post, r.config().beta)?;
                Ok((scores, ucb))
            }
        }
    }

    fn survivors(&self, ucb: &[(usize, f64)]) -> Vec<Survivor> {
        ucb.iter()
            .map(|&(idx, min_ucb)| Survivor {
                idx,
                label: self.request.actions[idx].label.clone(),
                min_ucb,
            })
            .collect()
    }

    pub fn snapshot(&self) -> ApiResult<Snapshot> {
        let (_, ucb) = self.scores()?;
        let step = match &self.runner {
            AnyRunner::Mrlpf(r) => r.step_in_round(),
            AnyRunner::MaxMinLcb(r) => r.history().len(),
        };
        Ok(Snapshot {
            id: self.id.clone(),
            algorithm: self.request.algorithm,
            status: self.status(),
            round: self.runner.round(),
            step,
            queries: self.runner.queries_made(),
            horizon: self.runner.horizon(),
            candidate_count: ucb.len(),
            survivors: self.survivors(&ucb),
            pending: self.pending(),
            schedule: self.schedule(),
            warm_start_licensed: self.runner.warm_start_licensed(),
        })
    }

    pub fn report(&self) -> ApiResult<Report> {
        let (scores, ucb) = self.scores()?;
        let ids: Vec<usize> = ucb.iter().map(|u| u.0).collect();
        let preferences = ids
            .iter()
            .map(|&a| {
                ids.iter()
                    .map(|&b| sigmoid(scores[a] - scores[b]))
                    .collect()
            })
            .collect();
        let recommended =
            ids.iter().copied().fold(
                ids[0],
                |best, x| if scores[x] > scores[best] { x } else { best },
            );
        let candidate_trajectory = match &self.runner {
            AnyRunner::Mrlpf(r) => r.candidate_trajectory(),
            AnyRunner::MaxMinLcb(_) => vec![ids.clone()],
        };
        Ok(Report {
            id: self.id.clone(),
            status: self.status(),
            queries: self.runner.queries_made(),
            survivors: self.survivors(&ucb),
            preferences,
            candidate_trajectory,
            recommended,
        })
    }

    pub fn created(&self) -> CreateResponse {
        CreateResponse {
            id: self.id.clone(),
            algorithm: self.request.algorithm,
            status: self.status(),
            horizon: self.request.horizon,
            num_actions: self.kernel.num_actions(),
            schedule: self.schedule(),
            pending: self.pending(),
        }
    }

    pub fn feedback_response(&self) -> ApiResult<FeedbackResponse> {
        let finished = self.status() == SessionStatus::Finished;
        Ok(FeedbackResponse {
            status: self.status(),
            queries: self.runner.queries_made(),
            pending: self.pending(),
            report: if finished { Some(self.report()?) } else { None },
        })
    }
}
