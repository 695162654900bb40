//! Kernel logistic regression of the preference function on pair observations.
//!
//! The fitted preference function has the representer form
//! `h(z) = Σ_i θ_i kk(z, z_i)`, and `θ` minimizes
//!
//! ```text
//! L(θ) = Σ_i [ -y_i log μ(h(z_i)) - (1 - y_i) log(1 - μ(h(z_i))) ] + (λ/2) ‖θ‖²
//! ```
//!
//! by plain gradient descent from `θ = 0`. Note the regularizer is the
//! Euclidean norm of the coefficient vector, not the RKHS norm of `h`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{dot, GramState};
use crate::kernel::{ActionKernel, Pair};

/// Logarithm arguments are clamped from below at this value.
pub const LOG_CLAMP: f64 = 1e-12;

/// Learning rates explored when tuning the fit.
pub const LEARNING_RATE_GRID: [f64; 5] = [0.01, 0.005, 0.001, 0.0005, 0.0001];

/// Logistic link `μ(u) = 1 / (1 + e^{-u})`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `μ'(u) = μ(u) (1 - μ(u))`.
pub fn sigmoid_derivative(u: f64) -> f64 {
    sigmoid(u) * sigmoid(-u)
}

/// Ordered preference observations `(pair, y)`; `y = true` means the first
/// action of the pair won.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceHistory {
    entries: Vec<(Pair, bool)>,
}

impl PreferenceHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pair: Pair, y: bool) {
        self.entries.push((pair, y));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Pair, bool)] {
        &self.entries
    }

    pub fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

impl FromIterator<(Pair, bool)> for PreferenceHistory {
    fn from_iter<I: IntoIterator<Item = (Pair, bool)>>(iter: I) -> Self {
        PreferenceHistory {
            entries: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Regularization weight of the loss.
    pub lambda: f64,
    /// Curvature constant used for this window's variance regularizer `λκ`.
    pub kappa_eff: f64,
    /// Caps the step at `1 / Lip` where `Lip = λ_max(K)² / 4 + λ` bounds the
    /// gradient's Lipschitz constant. Without it a fixed rate diverges once
    /// the Gram matrix grows large.
    pub stabilize_step: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 0.005,
            max_iters: 2000,
            grad_tol: 1e-6,
            lambda: 0.05,
            kappa_eff: 4.0,
            stabilize_step: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad =
            |what: &str, v: f64| Error::InvalidInput(format!("{what} must be positive, got {v}"));
        if !(self.learning_rate > 0.0) {
            return Err(bad("learning_rate", self.learning_rate));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(bad("grad_tol", self.grad_tol));
        }
        if !(self.lambda > 0.0) {
            return Err(bad("lambda", self.lambda));
        }
        if !(self.kappa_eff >= 4.0) {
            return Err(Error::InvalidInput(format!(
                "kappa_eff must be >= 4, got {}",
                self.kappa_eff
            )));
        }
        Ok(())
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa_eff = kappa;
        self
    }

    /// Regularizer of the variance estimate for this window.
    pub fn variance_regularizer(&self) -> f64 {
        self.lambda * self.kappa_eff
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub log_clamped: bool,
    pub step_size: f64,
}

/// Fitted representer coefficients for one history window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub theta: Vec<f64>,
    pub history: PreferenceHistory,
    pub lambda: f64,
    pub kappa_eff: f64,
    pub diagnostics: FitDiagnostics,
}

impl PosteriorState {
    /// No data: `h ≡ 0`.
    pub fn empty(config: &FitConfig) -> Self {
        PosteriorState {
            theta: Vec::new(),
            history: PreferenceHistory::new(),
            lambda: config.lambda,
            kappa_eff: config.kappa_eff,
            diagnostics: FitDiagnostics {
                converged: true,
                ..FitDiagnostics::default()
            },
        }
    }

    /// Per-action scores `a(x) = Σ_i θ_i (k(x, x_i) - k(x, x_i'))`, so that
    /// `h(x, x') = a(x) - a(x')`.
    pub fn action_scores(&self, kernel: &ActionKernel) -> Vec<f64> {
        (0..kernel.num_actions())
            .map(|x| {
                self.theta
                    .iter()
                    .zip(self.history.pairs())
                    .map(|(t, z)| t * kernel.pair_feature(x, z))
                    .sum()
            })
            .collect()
    }
}

/// `h_t(z) = Σ_i θ_i kk(z, z_i)`.
pub fn predict_h(state: &PosteriorState, kernel: &ActionKernel, z: Pair) -> f64 {
    state
        .theta
        .iter()
        .zip(state.history.pairs())
        .map(|(t, zi)| t * kernel.dueling(z, zi))
        .sum()
}

/// Negative log-likelihood term for one observation at logit `h`.
fn nll(h: f64, y: bool) -> (f64, bool) {
    // 1 - μ(h) = μ(-h) keeps precision for large |h|.
    let p = if y { sigmoid(h) } else { sigmoid(-h) };
    if p < LOG_CLAMP {
        (-LOG_CLAMP.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

fn check_window(history: &PreferenceHistory, gram: &GramState) -> Result<()> {
    if history.len() != gram.len() || history.pairs().zip(gram.pairs()).any(|(a, &b)| a != b) {
        return Err(Error::InvalidInput(
            "history and gram state describe different pair sequences".into(),
        ));
    }
    Ok(())
}

/// Regularized loss and its exact gradient with respect to `θ`.
pub fn loss_and_grad(
    theta: &[f64],
    history: &PreferenceHistory,
    gram: &GramState,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    check_window(history, gram)?;
    let t = history.len();
    if theta.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            got: theta.len(),
        });
    }
    let k = gram.dense_gram();
    let h: Vec<f64> = (0..t).map(|i| dot(&k[i * t..(i + 1) * t], theta)).collect();
    let mut loss = 0.5 * lambda * dot(theta, theta);
    let mut resid = vec![0.0; t];
    for (i, &(_, y)) in history.entries().iter().enumerate() {
        loss += nll(h[i], y).0;
        resid[i] = sigmoid(h[i]) - if y { 1.0 } else { 0.0 };
    }
    let grad = (0..t)
        .map(|i| dot(&k[i * t..(i + 1) * t], &resid) + lambda * theta[i])
        .collect();
    Ok((loss, grad))
}

/// Identical pairs share a kernel row, so gradient descent from `θ = 0` keeps
/// their coefficients equal. Iterating on one coefficient per distinct pair is
/// therefore the same trajectory at a fraction of the cost.
struct Grouped {
    members: Vec<Vec<usize>>,
    mult: Vec<f64>,
    wins: Vec<f64>,
    k: Vec<f64>,
}

impl Grouped {
    fn new(history: &PreferenceHistory, gram: &GramState) -> Self {
        let mut index: HashMap<Pair, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut wins = Vec::new();
        for (i, &(z, y)) in history.entries().iter().enumerate() {
            let g = *index.entry(z).or_insert_with(|| {
                members.push(Vec::new());
                wins.push(0.0);
                members.len() - 1
            });
            members[g].push(i);
            if y {
                wins[g] += 1.0;
            }
        }
        let u = members.len();
        let mut k = vec![0.0; u * u];
        for a in 0..u {
            for b in 0..u {
                k[a * u + b] = gram.gram_entry(members[a][0], members[b][0]);
            }
        }
        let mult = members.iter().map(|m| m.len() as f64).collect();
        Grouped {
            members,
            mult,
            wins,
            k,
        }
    }

    fn len(&self) -> usize {
        self.members.len()
    }

    /// Power iteration on the symmetric matrix `M^½ K M^½`, which shares its
    /// spectrum with the full Gram matrix.
    fn top_eigenvalue(&self) -> f64 {
        let u = self.len();
        let sq: Vec<f64> = self.mult.iter().map(|m| m.sqrt()).collect();
        let mut v: Vec<f64> = (0..u).map(|i| 1.0 + 1e-3 * i as f64).collect();
        let mut est = 0.0;
        for _ in 0..60 {
            let norm = dot(&v, &v).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let w: Vec<f64> = (0..u)
                .map(|a| {
                    sq[a]
                        * (0..u)
                            .map(|b| self.k[a * u + b] * sq[b] * v[b])
                            .sum::<f64>()
                })
                .collect();
            est = dot(&v, &w);
            v = w;
        }
        est.max(0.0)
    }
}

/// Fits `θ` by gradient descent from zero on the given window.
pub fn fit(
    history: &PreferenceHistory,
    gram: &GramState,
    config: &FitConfig,
) -> Result<PosteriorState> {
    config.validate()?;
    if history.is_empty() {
        return Ok(PosteriorState::empty(config));
    }
    check_window(history, gram)?;
    let groups = Grouped::new(history, gram);
    let u = groups.len();
    let lambda = config.lambda;

    let step = if config.stabilize_step {
        let top = groups.top_eigenvalue();
        config.learning_rate.min(1.0 / (0.25 * top * top + lambda))
    } else {
        config.learning_rate
    };

    let mut phi = vec![0.0; u];
    let mut h = vec![0.0; u];
    let mut grad = vec![0.0; u];
    let mut diag = FitDiagnostics {
        step_size: step,
        ..FitDiagnostics::default()
    };
    let mut iters = 0;
    loop {
        // h_a = Σ_b K_ab m_b φ_b
        let weighted: Vec<f64> = phi.iter().zip(&groups.mult).map(|(p, m)| p * m).collect();
        for a in 0..u {
            h[a] = dot(&groups.k[a * u..(a + 1) * u], &weighted);
        }
        let resid: Vec<f64> = (0..u)
            .map(|a| groups.mult[a] * sigmoid(h[a]) - groups.wins[a])
            .collect();
        let mut norm2 = 0.0;
        for a in 0..u {
            grad[a] = dot(&groups.k[a * u..(a + 1) * u], &resid) + lambda * phi[a];
            norm2 += groups.mult[a] * grad[a] * grad[a];
        }
        let norm = norm2.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient after {iters} iterations"
            )));
        }
        diag.grad_norm = norm;
        if norm <= config.grad_tol {
            diag.converged = true;
            break;
        }
        if iters == config.max_iters {
            break;
        }
        for a in 0..u {
            phi[a] -= step * grad[a];
        }
        iters += 1;
    }
    diag.iterations = iters;

    let mut loss = 0.0;
    for a in 0..u {
        let wins = groups.wins[a];
        let losses = groups.mult[a] - wins;
        let (lw, cw) = nll(h[a], true);
        let (ll, cl) = nll(h[a], false);
        loss += wins * lw + losses * ll;
        diag.log_clamped |= (wins > 0.0 && cw) || (losses > 0.0 && cl);
    }
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite loss".into()));
    }

    let mut theta = vec![0.0; history.len()];
    for (a, members) in groups.members.iter().enumerate() {
        for &i in members {
            theta[i] = phi[a];
        }
    }
    Ok(PosteriorState {
        theta,
        history: history.clone(),
        lambda,
        kappa_eff: config.kappa_eff,
        diagnostics: diag,
    })
}

/// Upper bound on `sup 1/μ'(h)` when `|h| ≤ 2B`: `2 + e^{2B} + e^{-2B}`.
pub fn kappa_bound(b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::InvalidInput(format!("B must be positive, got {b}")));
    }
    Ok(kappa_for_gap(2.0 * b))
}

/// `1 / μ'(gap) = 2 + e^{gap} + e^{-gap}`.
pub fn kappa_for_gap(gap: f64) -> f64 {
    2.0 + gap.exp() + (-gap).exp()
}

/// Exact `sup_{x,x'} 1/μ'(f(x) - f(x'))` over a finite table of utilities.
pub fn kappa_exact(f_values: &[f64]) -> f64 {
    let hi = f_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = f_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if f_values.is_empty() {
        return 4.0;
    }
    kappa_for_gap(hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// RKHS norm bound.
    pub b: f64,
    /// Largest link derivative over the domain, at most 1/4.
    pub l: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub delta: f64,
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
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
        if !(self.kappa >= 4.0) {
            return Err(Error::InvalidInput(format!(
                "kappa must be >= 4, got {}",
                self.kappa
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// `β(δ) = L B + (L/2) √((2κ/λ) log(2/δ))`.
    pub fn beta(&self) -> Result<f64> {
        self.validate()?;
        let tail = (2.0 * self.kappa / self.lambda * (2.0 / self.delta).ln()).sqrt();
        Ok(self.l * self.b + 0.5 * self.l * tail)
    }
}

/// Half-width `β(δ) σ_t(z)` of the confidence interval on `μ(h(z))`.
pub fn confidence_width(params: &ConfidenceParams, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    Ok(params.beta()? * sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::build_gram;
    use crate::kernel::{ActionSet, KernelFamily, KernelSpec};
    use approx::assert_relative_eq;

    fn kernel(n: usize) -> ActionKernel {
        let spec = KernelSpec::unit(KernelFamily::SquaredExponential, 0.2, 1).unwrap();
        ActionKernel::new(spec, ActionSet::grid_1d(0.0, 1.0, n).unwrap()).unwrap()
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(10.0), 0.9999546021312976, max_relative = 1e-15);
        for u in [-700.0, -3.2, 0.7, 25.0, 700.0] {
            assert_relative_eq!(sigmoid(u) + sigmoid(-u), 1.0, epsilon = 1e-15);
            assert!(sigmoid(u).is_finite());
        }
    }

    #[test]
    fn zero_theta_loss_is_log_two() {
        let k = kernel(4);
        for y in [true, false] {
            let hist: PreferenceHistory = [(Pair::new(0, 3), y)].into_iter().collect();
            let g = build_gram(&k, &[Pair::new(0, 3)], 0.2).unwrap();
            let (loss, grad) = loss_and_grad(&[0.0], &hist, &g, 0.05).unwrap();
            assert_relative_eq!(loss, 2f64.ln(), max_relative = 1e-15);
            let c = k.prior_variance(Pair::new(0, 3));
            let expected = if y { -0.5 * c } else { 0.5 * c };
            assert_relative_eq!(grad[0], expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn theta_length_checked() {
        let k = kernel(3);
        let hist: PreferenceHistory = [(Pair::new(0, 1), true)].into_iter().collect();
        let g = build_gram(&k, &[Pair::new(0, 1)], 0.2).unwrap();
        assert!(loss_and_grad(&[0.0, 1.0], &hist, &g, 0.05).is_err());
        let other = build_gram(&k, &[Pair::new(1, 0)], 0.2).unwrap();
        assert!(loss_and_grad(&[0.0], &hist, &other, 0.05).is_err());
    }

    #[test]
    fn empty_history_gives_flat_prediction() {
        let k = kernel(3);
        let cfg = FitConfig::default();
        let g = GramState::new(0.2).unwrap();
        let state = fit(&PreferenceHistory::new(), &g, &cfg).unwrap();
        assert!(state.theta.is_empty());
        assert_eq!(predict_h(&state, &k, Pair::new(0, 2)), 0.0);
        assert_eq!(sigmoid(predict_h(&state, &k, Pair::new(0, 2))), 0.5);
    }

    #[test]
    fn balanced_observations_fit_zero() {
        let k = kernel(4);
        let z = Pair::new(0, 2);
        let hist: PreferenceHistory = [(z, true), (z, false)].into_iter().collect();
        let g = build_gram(&k, &[z, z], 0.2).unwrap();
        let state = fit(&hist, &g, &FitConfig::default()).unwrap();
        assert!(predict_h(&state, &k, z).abs() < 1e-6);
    }

    #[test]
    fn kappa_values() {
        assert_relative_eq!(
            kappa_bound(5.0).unwrap(),
            22028.46584020665,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            kappa_bound(1.0).unwrap(),
            9.524391382167261,
            max_relative = 1e-12
        );
        assert_relative_eq!(kappa_bound(1e-9).unwrap(), 4.0, max_relative = 1e-12);
        assert!(kappa_bound(0.0).is_err());
        assert_eq!(kappa_exact(&[0.3, 0.3]), 4.0);
    }

    #[test]
    fn beta_example() {
        let p = ConfidenceParams {
            b: 1.0,
            l: 0.25,
            kappa: 6.0,
            lambda: 0.05,
            delta: 0.05,
        };
        assert_relative_eq!(p.beta().unwrap(), 3.9693141777654737, max_relative = 1e-12);
        assert_eq!(confidence_width(&p, 0.0).unwrap(), 0.0);
        let bad = ConfidenceParams { delta: 2.0, ..p };
        assert!(confidence_width(&bad, 0.1).is_err());
    }

    #[test]
    fn beta_monotonicity() {
        let p = ConfidenceParams {
            b: 1.0,
            l: 0.25,
            kappa: 6.0,
            lambda: 0.05,
            delta: 0.05,
        };
        let b0 = p.beta().unwrap();
        assert!(ConfidenceParams { kappa: 7.0, ..p }.beta().unwrap() > b0);
        assert!(ConfidenceParams { b: 2.0, ..p }.beta().unwrap() > b0);
        assert!(ConfidenceParams { delta: 0.1, ..p }.beta().unwrap() < b0);
        assert!(ConfidenceParams { lambda: 0.1, ..p }.beta().unwrap() < b0);
    }

    #[test]
    fn invalid_fit_config() {
        let cfg = FitConfig {
            kappa_eff: 3.0,
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = FitConfig {
            learning_rate: 0.0,
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn clamped_log_is_finite() {
        assert!(nll(-800.0, true).1);
        assert_relative_eq!(nll(-800.0, true).0, -LOG_CLAMP.ln());
        assert!(!nll(3.0, true).1);
    }
}
