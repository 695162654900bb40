//! Request and response bodies.

use prefbo_core::experiment::Algorithm;
use serde::{Deserialize, Serialize};

/// Per-action display payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDescriptor {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    Fixed,
    Theoretical,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Mrlpf
}
fn default_kernel() -> String {
    "se".into()
}
fn default_lengthscale() -> f64 {
    0.1
}
fn default_beta_kind() -> BetaKind {
    BetaKind::Fixed
}
fn default_delta() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    0.05
}
fn default_l() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Kernel short name: `se`, `matern15`, `matern25` or `linear`.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_lengthscale")]
    pub lengthscale: f64,
    pub horizon: usize,
    #[serde(default = "default_beta_kind")]
    pub beta_mode: BetaKind,
    /// Fixed confidence multiplier; 0.1 when omitted.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Norm bound of the utility; 1 when omitted.
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default = "default_l")]
    pub l: f64,
    /// Curvature constant for the first window; derived from `b` when omitted.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    pub actions: Vec<ActionDescriptor>,
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    AwaitingFeedback,
    /// Only held while a request is refitting; never returned to clients.
    Fitting,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionView {
    pub idx: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPair {
    /// Echo this back with the feedback.
    pub pair_token: String,
    /// 1-based index of this query.
    pub t: usize,
    pub round: usize,
    pub first: ActionView,
    pub second: ActionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survivor {
    pub idx: usize,
    pub label: String,
    /// Smallest upper confidence bound on beating another survivor.
    pub min_ucb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub algorithm: Algorithm,
    pub status: SessionStatus,
    pub horizon: usize,
    pub num_actions: usize,
    /// Round lengths; empty for algorithms without rounds.
    pub schedule: Vec<usize>,
    pub pending: Option<PendingPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub algorithm: Algorithm,
    pub status: SessionStatus,
    pub round: usize,
    /// Feedback received in the current round.
    pub step: usize,
    pub queries: usize,
    pub horizon: usize,
    pub candidate_count: usize,
    pub survivors: Vec<Survivor>,
    pub pending: Option<PendingPair>,
    pub schedule: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start_licensed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub status: SessionStatus,
    pub queries: usize,
    pub survivors: Vec<Survivor>,
    /// `preferences[i][j]`: predicted probability that survivor `i` beats
    /// survivor `j`.
    pub preferences: Vec<Vec<f64>>,
    /// Candidate set at the start of each round, then after the last
    /// elimination.
    pub candidate_trajectory: Vec<Vec<usize>>,
    /// Survivor with the highest fitted score.
    pub recommended: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    #[serde(alias = "First")]
    First,
    #[serde(alias = "Second")]
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub winner: Winner,
    pub pair_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub status: SessionStatus,
    pub queries: usize,
    pub pending: Option<PendingPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<Report>,
}
