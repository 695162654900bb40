//! Dueling-kernel Gram matrices, their Cholesky factors, posterior variances
//! and information gain.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::{ActionKernel, Pair};

/// Below this size an appended pair triggers a full refactorization; at or
/// above it the factor is extended by one bordered row.
pub const REFACTOR_BELOW: usize = 64;

/// Variances in `[-NEGATIVE_VARIANCE_TOL, 0)` are clamped to zero; anything
/// more negative is reported as a numerical error.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

/// Default cap on the horizon accepted by [`greedy_max_info_gain`].
pub const GREEDY_INFO_GAIN_CAP: usize = 2000;

const JITTER_BASE: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// How [`GramState::append_with`] grows the factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    /// Refactorize below [`REFACTOR_BELOW`], border above.
    Auto,
    Refactor,
    Border,
}

/// Gram matrix of the dueling kernel over observed pairs together with the
/// lower Cholesky factor of `gram + (rho + jitter) I`.
#[derive(Debug, Clone)]
pub struct GramState {
    pairs: Vec<Pair>,
    // Lower-triangular rows; row i holds i + 1 entries.
    gram: Vec<Vec<f64>>,
    factor: Vec<Vec<f64>>,
    rho: f64,
    jitter: f64,
}

impl GramState {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "regularizer must be positive, got {rho}"
            )));
        }
        Ok(GramState {
            pairs: Vec::new(),
            gram: Vec::new(),
            factor: Vec::new(),
            rho,
            jitter: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Diagonal jitter currently applied on top of `rho`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn gram_entry(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.gram[i][j]
        } else {
            self.gram[j][i]
        }
    }

    /// Row `i` of the lower factor (entries `0..=i`).
    pub fn factor_row(&self, i: usize) -> &[f64] {
        &self.factor[i]
    }

    /// Dense row-major copy of the Gram matrix (without regularizer).
    pub fn dense_gram(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                out[i * n + j] = self.gram[i][j];
                out[j * n + i] = self.gram[i][j];
            }
        }
        out
    }

    /// Dense row-major copy of the lower factor.
    pub fn dense_factor(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n * n];
        for (i, row) in self.factor.iter().enumerate() {
            out[i * n..i * n + row.len()].copy_from_slice(row);
        }
        out
    }

    /// Appends one observed pair, growing the factor per [`Growth::Auto`].
    ///
    /// Returns `true` when the jitter changed, i.e. the leading block of the
    /// factor is no longer the one callers may have cached against.
    pub fn append(&mut self, kernel: &ActionKernel, pair: Pair) -> Result<bool> {
        self.append_with(kernel, pair, Growth::Auto)
    }

    pub fn append_with(
        &mut self,
        kernel: &ActionKernel,
        pair: Pair,
        growth: Growth,
    ) -> Result<bool> {
        kernel.check_pair(pair)?;
        let n = self.len();
        let mut row: Vec<f64> = self
            .pairs
            .iter()
            .map(|&p| kernel.dueling(pair, p))
            .collect();
        row.push(kernel.prior_variance(pair));
        self.pairs.push(pair);
        self.gram.push(row);

        let border = match growth {
            Growth::Auto => n >= REFACTOR_BELOW,
            Growth::Refactor => false,
            Growth::Border => true,
        };
        if border {
            let new_row = &self.gram[n];
            let l = self.solve_lower(&new_row[..n]);
            let d2 = new_row[n] + self.rho + self.jitter - dot(&l, &l);
            if d2 > 0.0 && d2.is_finite() {
                let mut frow = l;
                frow.push(d2.sqrt());
                self.factor.push(frow);
                return Ok(false);
            }
        }
        let before = self.jitter;
        self.refactor()?;
        Ok(self.jitter != before)
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.len();
        if let Some(f) = cholesky_rows(&self.gram, self.rho + self.jitter) {
            self.factor = f;
            return Ok(());
        }
        let trace: f64 = (0..n).map(|i| self.gram[i][i]).sum();
        let scale = (trace / n as f64).max(f64::MIN_POSITIVE);
        let mut mult = if self.jitter > 0.0 {
            (self.jitter / scale * 10.0).max(JITTER_BASE)
        } else {
            JITTER_BASE
        };
        let mut last = 0.0;
        while mult <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = mult * scale;
            last = jitter;
            if let Some(f) = cholesky_rows(&self.gram, self.rho + jitter) {
                self.factor = f;
                self.jitter = jitter;
                return Ok(());
            }
            mult *= 10.0;
        }
        // Leave the state consistent with its previous contents.
        self.pairs.pop();
        self.gram.pop();
        Err(Error::Factorization { jitter: last })
    }

    /// Solves `L v = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        debug_assert!(b.len() <= self.factor.len());
        let mut v = Vec::with_capacity(b.len());
        for (i, &bi) in b.iter().enumerate() {
            let row = &self.factor[i];
            let s = bi - dot(&row[..i], &v);
            v.push(s / row[i]);
        }
        v
    }

    /// Solves `(gram + rho I) x = b` through the factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let v = self.solve_lower(b);
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = v[i];
            for (k, xk) in x.iter().enumerate().skip(i + 1) {
                s -= self.factor[k][i] * xk;
            }
            x[i] = s / self.factor[i][i];
        }
        x
    }

    /// Posterior variance `kk(z,z) - kk_t(z)^T (K + rho I)^{-1} kk_t(z)`.
    pub fn posterior_variance(&self, kernel: &ActionKernel, z: Pair) -> Result<f64> {
        kernel.check_pair(z)?;
        let prior = kernel.prior_variance(z);
        if self.is_empty() {
            return Ok(prior);
        }
        let kvec: Vec<f64> = self.pairs.iter().map(|&p| kernel.dueling(z, p)).collect();
        let v = self.solve_lower(&kvec);
        clamp_variance(prior - dot(&v, &v))
    }
}

/// Builds the Gram state for `pairs` at regularizer `rho`.
pub fn build_gram(kernel: &ActionKernel, pairs: &[Pair], rho: f64) -> Result<GramState> {
    let mut state = GramState::new(rho)?;
    for &p in pairs {
        kernel.check_pair(p)?;
        let mut row: Vec<f64> = state.pairs.iter().map(|&q| kernel.dueling(p, q)).collect();
        row.push(kernel.prior_variance(p));
        state.pairs.push(p);
        state.gram.push(row);
    }
    if !state.is_empty() {
        state.refactor()?;
    }
    Ok(state)
}

/// Free-function form of [`GramState::posterior_variance`].
pub fn posterior_variance(state: &GramState, kernel: &ActionKernel, z: Pair) -> Result<f64> {
    state.posterior_variance(kernel, z)
}

pub(crate) fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_VARIANCE_TOL {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "posterior variance {v:e} is negative"
        )))
    }
}

/// Realized information gain `½ log det(I + K / lambda)` of a pair sequence.
pub fn info_gain(kernel: &ActionKernel, pairs: &[Pair], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if pairs.is_empty() {
        return Ok(0.0);
    }
    // det(I + K/λ) = det(K + λI) / λ^n
    let state = build_gram(kernel, pairs, lambda)?;
    let logdet: f64 = (0..state.len())
        .map(|i| state.factor[i][i].ln())
        .sum::<f64>()
        * 2.0;
    Ok((0.5 * (logdet - pairs.len() as f64 * lambda.ln())).max(0.0))
}

/// Greedy lower estimate of the maximum information gain over `horizon` pair
/// queries. Each step adds the pair of largest posterior variance.
pub fn greedy_max_info_gain(
    kernel: &Arc<ActionKernel>,
    horizon: usize,
    lambda: f64,
) -> Result<f64> {
    greedy_max_info_gain_capped(kernel, horizon, lambda, GREEDY_INFO_GAIN_CAP)
}

pub fn greedy_max_info_gain_capped(
    kernel: &Arc<ActionKernel>,
    horizon: usize,
    lambda: f64,
    cap: usize,
) -> Result<f64> {
    Ok(greedy_sequence(kernel, horizon, lambda, cap)?.1)
}

/// Greedy pair sequence and its realized information gain.
pub fn greedy_sequence(
    kernel: &Arc<ActionKernel>,
    horizon: usize,
    lambda: f64,
    cap: usize,
) -> Result<(Vec<Pair>, f64)> {
    if horizon > cap {
        return Err(Error::CapExceeded {
            what: "horizon",
            value: horizon,
            cap,
        });
    }
    let mut post = PairPosterior::new(Arc::clone(kernel), lambda)?;
    let all: Vec<usize> = (0..kernel.num_actions()).collect();
    let mut gain = 0.0;
    let mut seq = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (pair, var) = post.max_variance_pair(&all)?;
        gain += 0.5 * (var / lambda).ln_1p();
        post.append(pair)?;
        seq.push(pair);
    }
    Ok((seq, gain))
}

/// Posterior variance over every pair of a finite action set, maintained
/// incrementally as pairs are observed.
///
/// With `g_i(x) = k(x, x_i) - k(x, x_i')`, the cross-covariance between a
/// query `(a, b)` and the history is `g(a) - g(b)`. Caching `w_x = L^{-1} g(x)`
/// and the inner products `S = W W^T` makes each variance an O(1) lookup:
/// `σ²(a, b) = kk(z, z) - (S_aa + S_bb - 2 S_ab)`.
#[derive(Debug, Clone)]
pub struct PairPosterior {
    kernel: Arc<ActionKernel>,
    gram: GramState,
    proj: Vec<Vec<f64>>,
    inner: Vec<f64>,
}

impl PairPosterior {
    pub fn new(kernel: Arc<ActionKernel>, rho: f64) -> Result<Self> {
        let n = kernel.num_actions();
        Ok(PairPosterior {
            gram: GramState::new(rho)?,
            proj: vec![Vec::new(); n],
            inner: vec![0.0; n * n],
            kernel,
        })
    }

    pub fn kernel(&self) -> &Arc<ActionKernel> {
        &self.kernel
    }

    pub fn gram(&self) -> &GramState {
        &self.gram
    }

    pub fn rho(&self) -> f64 {
        self.gram.rho()
    }

    pub fn len(&self) -> usize {
        self.gram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gram.is_empty()
    }

    pub fn append(&mut self, pair: Pair) -> Result<()> {
        let changed = self.gram.append(&self.kernel, pair)?;
        if changed {
            self.rebuild();
            return Ok(());
        }
        let t = self.gram.len() - 1;
        let row = self.gram.factor_row(t);
        let diag = row[t];
        let n = self.kernel.num_actions();
        let mut col = Vec::with_capacity(n);
        for (x, w) in self.proj.iter_mut().enumerate() {
            let g = self.kernel.pair_feature(x, pair);
            let v = (g - dot(&row[..t], w)) / diag;
            w.push(v);
            col.push(v);
        }
        for a in 0..n {
            let ca = col[a];
            let dst = &mut self.inner[a * n..(a + 1) * n];
            for (d, cb) in dst.iter_mut().zip(&col) {
                *d += ca * cb;
            }
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        let n = self.kernel.num_actions();
        let pairs = self.gram.pairs().to_vec();
        for x in 0..n {
            let g: Vec<f64> = pairs
                .iter()
                .map(|&p| self.kernel.pair_feature(x, p))
                .collect();
            self.proj[x] = self.gram.solve_lower(&g);
        }
        for a in 0..n {
            for b in 0..n {
                self.inner[a * n + b] = dot(&self.proj[a], &self.proj[b]);
            }
        }
    }

    #[inline]
    fn raw_variance(&self, z: Pair) -> f64 {
        let n = self.kernel.num_actions();
        let (a, b) = (z.first, z.second);
        let explained = self.inner[a * n + a] + self.inner[b * n + b] - 2.0 * self.inner[a * n + b];
        self.kernel.prior_variance(z) - explained
    }

    pub fn variance(&self, z: Pair) -> Result<f64> {
        self.kernel.check_pair(z)?;
        clamp_variance(self.raw_variance(z))
    }

    pub fn std_dev(&self, z: Pair) -> Result<f64> {
        Ok(self.variance(z)?.sqrt())
    }

    /// Largest-variance pair within `candidates × candidates`; ties go to the
    /// lexicographically smallest `(first, second)`.
    pub fn max_variance_pair(&self, candidates: &[usize]) -> Result<(Pair, f64)> {
        let mut sorted = candidates.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut best: Option<(Pair, f64)> = None;
        for &a in &sorted {
            for &b in &sorted {
                let z = Pair::new(a, b);
                let v = self.variance(z)?;
                match best {
                    Some((_, bv)) if v <= bv => {}
                    _ => best = Some((z, v)),
                }
            }
        }
        best.ok_or_else(|| Error::InvalidInput("candidate set is empty".into()))
    }
}

/// Solves `(A + shift I) x = b` for a dense row-major symmetric positive
/// definite `A`. Returns `None` when the factorization breaks down.
pub(crate) fn spd_solve(a: &[f64], n: usize, shift: f64, b: &[f64]) -> Option<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..n).map(|i| a[i * n..i * n + i + 1].to_vec()).collect();
    let l = cholesky_rows(&rows, shift)?;
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let s = b[i] - dot(&l[i][..i], &v);
        v.push(s / l[i][i]);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = v[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Row-wise Cholesky of `A + shift I` where `A` is given as lower rows.
fn cholesky_rows(a: &[Vec<f64>], shift: f64) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(i + 1);
        for j in 0..i {
            let s = a[i][j] - dot(&row[..j], &l[j][..j]);
            row.push(s / l[j][j]);
        }
        let d = a[i][i] + shift - dot(&row, &row);
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        row.push(d.sqrt());
        l.push(row);
    }
    Some(l)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{ActionSet, KernelFamily, KernelSpec};
    use approx::assert_relative_eq;

    fn grid_kernel(n: usize, l: f64) -> Arc<ActionKernel> {
        let spec = KernelSpec::unit(KernelFamily::SquaredExponential, l, 1).unwrap();
        Arc::new(ActionKernel::new(spec, ActionSet::grid_1d(0.0, 1.0, n).unwrap()).unwrap())
    }

    #[test]
    fn empty_state_uses_prior() {
        let k = grid_kernel(5, 0.3);
        let g = build_gram(&k, &[], 0.1).unwrap();
        let z = Pair::new(0, 4);
        assert_eq!(g.posterior_variance(&k, z).unwrap(), k.prior_variance(z));
    }

    #[test]
    fn one_by_one_case() {
        let k = grid_kernel(5, 0.3);
        let z = Pair::new(1, 3);
        let rho = 0.25;
        let g = build_gram(&k, &[z], rho).unwrap();
        let c = k.prior_variance(z);
        assert_eq!(g.gram_entry(0, 0), c);
        assert_relative_eq!(g.factor_row(0)[0], (c + rho).sqrt(), max_relative = 1e-15);
        let expected = c - c * c / (c + rho);
        assert_relative_eq!(
            g.posterior_variance(&k, z).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn nonpositive_regularizer_rejected() {
        assert!(GramState::new(0.0).is_err());
        assert!(GramState::new(-1.0).is_err());
        assert!(info_gain(&grid_kernel(3, 0.2), &[Pair::new(0, 1)], 0.0).is_err());
    }

    #[test]
    fn out_of_range_pair_rejected() {
        let k = grid_kernel(3, 0.2);
        let mut g = GramState::new(0.1).unwrap();
        assert!(g.append(&k, Pair::new(0, 3)).is_err());
        assert!(g.is_empty());
    }

    #[test]
    fn clamp_threshold() {
        assert_eq!(clamp_variance(-5e-11).unwrap(), 0.0);
        assert_eq!(clamp_variance(0.3).unwrap(), 0.3);
        assert!(clamp_variance(-1e-9).is_err());
    }

    #[test]
    fn self_pairs_have_zero_gram_rows() {
        let k = grid_kernel(4, 0.3);
        let g = build_gram(&k, &[Pair::new(2, 2), Pair::new(0, 3)], 0.1).unwrap();
        assert_eq!(g.gram_entry(0, 0), 0.0);
        assert_eq!(g.gram_entry(1, 0), 0.0);
    }

    fn raw_state(rows: Vec<Vec<f64>>, rho: f64) -> GramState {
        let n = rows.len();
        GramState {
            pairs: vec![Pair::new(0, 1); n],
            gram: rows,
            factor: Vec::new(),
            rho,
            jitter: 0.0,
        }
    }

    #[test]
    fn jitter_rescues_slightly_indefinite_matrix() {
        let mut g = raw_state(vec![vec![1.0], vec![1.0 + 1e-12, 1.0]], 1e-300);
        g.refactor().unwrap();
        assert!(g.jitter() >= 1e-10 && g.jitter() <= 1e-6);
    }

    #[test]
    fn indefinite_matrix_fails_with_last_jitter() {
        let mut g = raw_state(vec![vec![1.0], vec![2.0, 1.0]], 1e-3);
        match g.refactor() {
            Err(Error::Factorization { jitter }) => assert!(jitter > 0.0 && jitter <= 1.01e-6),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn one_shot_info_gain() {
        let k = grid_kernel(4, 0.3);
        let z = Pair::new(0, 2);
        let lam = 0.05;
        let expected = 0.5 * (1.0 + k.prior_variance(z) / lam).ln();
        assert_relative_eq!(
            info_gain(&k, &[z], lam).unwrap(),
            expected,
            max_relative = 1e-12
        );
        assert_eq!(info_gain(&k, &[], lam).unwrap(), 0.0);
    }

    #[test]
    fn greedy_single_step_picks_largest_prior_variance() {
        let k = grid_kernel(7, 0.2);
        let lam = 0.1;
        let (seq, gain) = greedy_sequence(&k, 1, lam, 10).unwrap();
        let best = k
            .actions()
            .all_pairs()
            .map(|z| k.prior_variance(z))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(k.prior_variance(seq[0]), best);
        assert_relative_eq!(gain, 0.5 * (best / lam).ln_1p(), max_relative = 1e-14);
    }

    #[test]
    fn greedy_vanishes_for_huge_lambda() {
        let k = grid_kernel(5, 0.2);
        let g = greedy_max_info_gain(&k, 5, 1e12).unwrap();
        assert!(g < 1e-10);
    }

    #[test]
    fn greedy_cap_enforced() {
        let k = grid_kernel(3, 0.2);
        assert!(matches!(
            greedy_max_info_gain(&k, GREEDY_INFO_GAIN_CAP + 1, 0.1),
            Err(Error::CapExceeded { .. })
        ));
        assert_eq!(greedy_max_info_gain(&k, 0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn solve_inverts_regularized_gram() {
        let k = grid_kernel(6, 0.25);
        let pairs = [
            Pair::new(0, 5),
            Pair::new(1, 3),
            Pair::new(4, 2),
            Pair::new(2, 2),
        ];
        let g = build_gram(&k, &pairs, 0.3).unwrap();
        let b = [1.0, -2.0, 0.5, 3.0];
        let x = g.solve(&b);
        for i in 0..4 {
            let ax: f64 = (0..4).map(|j| g.gram_entry(i, j) * x[j]).sum::<f64>() + 0.3 * x[i];
            assert_relative_eq!(ax, b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn max_variance_pair_on_singleton() {
        let k = grid_kernel(4, 0.25);
        let post = PairPosterior::new(k, 0.1).unwrap();
        assert_eq!(
            post.max_variance_pair(&[2]).unwrap(),
            (Pair::new(2, 2), 0.0)
        );
        assert!(post.max_variance_pair(&[]).is_err());
    }
}
