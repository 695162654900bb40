//! MaxMinLCB baseline: a leader-follower game over lower confidence bounds
//! of the preference probability, on the full cumulative history.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::PreferenceEnv;
use crate::error::{Error, Result};
use crate::gram::PairPosterior;
use crate::kernel::{ActionKernel, Pair};
use crate::policy::{drive, PairPolicy};
use crate::preference::{fit, sigmoid, FitConfig, PosteriorState, PreferenceHistory};
use crate::trace::RegretTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinLcbConfig {
    pub horizon: usize,
    pub beta: f64,
    /// Curvature constant; the variance regularizer is `λκ`.
    pub kappa: f64,
    pub fit: FitConfig,
    /// Refit the preference function after every `refit_every` observations.
    pub refit_every: usize,
}

impl MaxMinLcbConfig {
    pub fn new(horizon: usize, beta: f64, kappa: f64, fit: FitConfig) -> Self {
        MaxMinLcbConfig {
            horizon,
            beta,
            kappa,
            fit,
            refit_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be >= 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.kappa >= 4.0) {
            return Err(Error::InvalidInput(format!(
                "kappa must be >= 4, got {}",
                self.kappa
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::InvalidInput("refit_every must be >= 1".into()));
        }
        self.fit.with_kappa(self.kappa).validate()
    }
}

/// `μ(a_x - a_x') - β σ(x, x')`.
fn lcb(scores: &[f64], post: &PairPosterior, beta: f64, z: Pair) -> Result<f64> {
    Ok(sigmoid(scores[z.first] - scores[z.second]) - beta * post.std_dev(z)?)
}

/// Leader `x = argmax_x min_x' LCB(x, x')` with its best response
/// `x' = argmin_x' LCB(x, x')`. Ties go to the smallest index.
pub fn maxminlcb_step(
    state: &PosteriorState,
    posterior: &PairPosterior,
    beta: f64,
) -> Result<Pair> {
    let scores = state.action_scores(posterior.kernel());
    game_solution(&scores, posterior, beta)
}

pub(crate) fn game_solution(scores: &[f64], posterior: &PairPosterior, beta: f64) -> Result<Pair> {
    let n = posterior.kernel().num_actions();
    if n == 0 {
        return Err(Error::InvalidInput("action set is empty".into()));
    }
    let mut best: Option<(Pair, f64)> = None;
    for x in 0..n {
        let mut follower = (0, f64::INFINITY);
        for xp in 0..n {
            let v = lcb(scores, posterior, beta, Pair::new(x, xp))?;
            if v < follower.1 {
                follower = (xp, v);
            }
        }
        match best {
            Some((_, bv)) if follower.1 <= bv => {}
            _ => best = Some((Pair::new(x, follower.0), follower.1)),
        }
    }
    Ok(best.unwrap().0)
}

#[derive(Debug, Clone)]
pub struct MaxMinLcbRunner {
    config: MaxMinLcbConfig,
    posterior: PairPosterior,
    history: PreferenceHistory,
    state: PosteriorState,
    pending: Option<(Pair, f64)>,
}

impl MaxMinLcbRunner {
    pub fn new(kernel: Arc<ActionKernel>, config: MaxMinLcbConfig) -> Result<Self> {
        config.validate()?;
        let fit_cfg = config.fit.with_kappa(config.kappa);
        let posterior = PairPosterior::new(kernel, fit_cfg.variance_regularizer())?;
        let mut runner = MaxMinLcbRunner {
            state: PosteriorState::empty(&fit_cfg),
            history: PreferenceHistory::new(),
            pending: None,
            posterior,
            config,
        };
        runner.select()?;
        Ok(runner)
    }

    fn select(&mut self) -> Result<()> {
        self.pending = if self.history.len() >= self.config.horizon {
            None
        } else {
            let z = maxminlcb_step(&self.state, &self.posterior, self.config.beta)?;
            Some((z, self.posterior.variance(z)?))
        };
        Ok(())
    }

    pub fn config(&self) -> &MaxMinLcbConfig {
        &self.config
    }

    pub fn history(&self) -> &PreferenceHistory {
        &self.history
    }

    pub fn state(&self) -> &PosteriorState {
        &self.state
    }

    pub fn posterior(&self) -> &PairPosterior {
        &self.posterior
    }
}

impl PairPolicy for MaxMinLcbRunner {
    fn name(&self) -> &'static str {
        "maxminlcb"
    }

    fn pending(&self) -> Option<Pair> {
        self.pending.map(|p| p.0)
    }

    fn pending_variance(&self) -> f64 {
        self.pending.map_or(0.0, |p| p.1)
    }

    fn round(&self) -> usize {
        0
    }

    fn submit(&mut self, y: bool) -> Result<()> {
        let (pair, _) = self
            .pending
            .ok_or_else(|| Error::InvalidInput("no pending pair; the run is finished".into()))?;
        self.history.push(pair, y);
        self.posterior.append(pair)?;
        let t = self.history.len();
        if t.is_multiple_of(self.config.refit_every) || t == self.config.horizon {
            let cfg = self.config.fit.with_kappa(self.config.kappa);
            self.state = fit(&self.history, self.posterior.gram(), &cfg)?;
        }
        self.select()
    }

    fn queries_made(&self) -> usize {
        self.history.len()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// The baseline never eliminates.
    fn candidates(&self) -> Vec<usize> {
        (0..self.posterior.kernel().num_actions()).collect()
    }
}

pub fn run_maxminlcb<E: PreferenceEnv + ?Sized>(
    env: &mut E,
    kernel: Arc<ActionKernel>,
    config: MaxMinLcbConfig,
) -> Result<RegretTrace> {
    check_env(env.num_actions(), &kernel)?;
    let mut runner = MaxMinLcbRunner::new(kernel, config)?;
    drive(&mut runner, env)
}

pub(crate) fn check_env(env_actions: usize, kernel: &ActionKernel) -> Result<()> {
    if env_actions != kernel.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: kernel.num_actions(),
            got: env_actions,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{ActionSet, KernelFamily, KernelSpec};

    fn kernel(n: usize) -> Arc<ActionKernel> {
        let spec = KernelSpec::unit(KernelFamily::SquaredExponential, 0.3, 1).unwrap();
        Arc::new(ActionKernel::new(spec, ActionSet::grid_1d(0.0, 1.0, n).unwrap()).unwrap())
    }

    #[test]
    fn single_action_is_forced() {
        let k = Arc::new(
            ActionKernel::new(
                KernelSpec::unit(KernelFamily::SquaredExponential, 0.3, 1).unwrap(),
                ActionSet::new(vec![vec![0.5]]).unwrap(),
            )
            .unwrap(),
        );
        let post = PairPosterior::new(k, 1.0).unwrap();
        let state = PosteriorState::empty(&FitConfig::default());
        assert_eq!(maxminlcb_step(&state, &post, 1.0).unwrap(), Pair::new(0, 0));
    }

    #[test]
    fn prior_step_follower_is_farthest_action() {
        let k = kernel(5);
        let post = PairPosterior::new(k, 1.0).unwrap();
        let state = PosteriorState::empty(&FitConfig::default());
        // Leader 2 faces the smallest worst-case variance.
        assert_eq!(maxminlcb_step(&state, &post, 1.0).unwrap(), Pair::new(2, 0));
    }

    #[test]
    fn zero_beta_on_true_scores_picks_the_optimum() {
        let k = kernel(6);
        let post = PairPosterior::new(k, 1.0).unwrap();
        let f = [0.3, -1.0, 2.5, 0.0, 2.4, -0.7];
        let z = game_solution(&f, &post, 0.0).unwrap();
        // Brute-force game: row minima of μ(f_x - f_x').
        let row_min = |x: usize| {
            f.iter()
                .map(|&v| sigmoid(f[x] - v))
                .fold(f64::INFINITY, f64::min)
        };
        let leader = (0..6).fold(0, |b, x| if row_min(x) > row_min(b) { x } else { b });
        assert_eq!(leader, 2);
        assert_eq!(z, Pair::new(2, 2));
    }

    #[test]
    fn history_is_cumulative() {
        let k = kernel(4);
        let cfg = MaxMinLcbConfig::new(7, 1.0, 6.0, FitConfig::default());
        let mut r = MaxMinLcbRunner::new(k, cfg).unwrap();
        for i in 0..7 {
            assert_eq!(r.history().len(), i);
            r.submit(i % 2 == 0).unwrap();
        }
        assert!(r.is_finished());
        assert_eq!(r.posterior().len(), 7);
        assert!(r.submit(true).is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = MaxMinLcbConfig::new(5, 0.0, 6.0, FitConfig::default());
        assert!(cfg.validate().is_err());
        cfg.beta = 1.0;
        cfg.refit_every = 0;
        assert!(cfg.validate().is_err());
        cfg.refit_every = 2;
        cfg.kappa = 1.0;
        assert!(cfg.validate().is_err());
    }
}
