//! Preferential Bayesian optimization over finite action sets.
//!
//! A learner queries pairs of actions and observes which one a
//! Bradley-Terry-Luce oracle prefers. Preferences are modeled with a logistic
//! link over a dueling kernel built from a base kernel on actions.
//!
//! * [`mrlpf`]: multi-round elimination that queries maximum-variance pairs
//!   and fits once per round.
//! * [`maxminlcb`]: a leader-follower baseline on lower confidence bounds.
//! * [`env`]: test utilities, the preference oracle and regret.
//! * [`experiment`]: seeded batches and CSV output.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod env;
pub mod error;
pub mod experiment;
pub mod gram;
pub mod kernel;
pub mod maxminlcb;
pub mod mrlpf;
pub mod policy;
pub mod preference;
pub mod trace;

pub use error::{Error, Result};
pub use kernel::{ActionKernel, ActionSet, KernelFamily, KernelSpec, MaternSmoothness, Pair};
pub use maxminlcb::{MaxMinLcbConfig, MaxMinLcbRunner};
pub use mrlpf::{BetaMode, MrlpfConfig, MrlpfRunner, RoundSchedule};
pub use policy::{AnyRunner, PairPolicy};
pub use preference::FitConfig;
pub use trace::RegretTrace;
