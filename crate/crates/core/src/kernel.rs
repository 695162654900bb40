//! Base kernels on actions and the dueling kernel they induce on action pairs.
//!
//! For a base kernel `k`, the dueling kernel on pairs `z = (x, x')` is
//!
//! ```text
//! kk(z1, z2) = k(x1, x2) + k(x1', x2') - k(x1, x2') - k(x1', x2)
//! ```
//!
//! Preference functions `h(x, x') = f(x) - f(x')` live in its RKHS with the
//! same norm as `f` in the RKHS of `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-integer Matérn smoothness values with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternSmoothness {
    #[serde(rename = "1.5")]
    OneAndHalf,
    #[serde(rename = "2.5")]
    TwoAndHalf,
}

impl MaternSmoothness {
    pub fn nu(self) -> f64 {
        match self {
            MaternSmoothness::OneAndHalf => 1.5,
            MaternSmoothness::TwoAndHalf => 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `k(x, x') = σ² <x, x'>`; normalized only when inputs lie in the unit ball.
    Linear,
    SquaredExponential,
    Matern(MaternSmoothness),
}

impl KernelFamily {
    /// Parses the short names used by the CLI and config files.
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(KernelFamily::Linear),
            "se" | "rbf" | "squared_exponential" => Ok(KernelFamily::SquaredExponential),
            "matern15" | "matern1.5" => Ok(KernelFamily::Matern(MaternSmoothness::OneAndHalf)),
            "matern25" | "matern2.5" => Ok(KernelFamily::Matern(MaternSmoothness::TwoAndHalf)),
            other => Err(Error::InvalidInput(format!(
                "unknown kernel family `{other}`"
            ))),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            KernelFamily::Linear => "linear",
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern(MaternSmoothness::OneAndHalf) => "matern15",
            KernelFamily::Matern(MaternSmoothness::TwoAndHalf) => "matern25",
        }
    }
}

/// Kernel family plus hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub input_dim: usize,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        lengthscale: f64,
        signal_variance: f64,
        input_dim: usize,
    ) -> Result<Self> {
        let spec = KernelSpec {
            family,
            lengthscale,
            signal_variance,
            input_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Unit signal variance, which is what the benchmarks use.
    pub fn unit(family: KernelFamily, lengthscale: f64, input_dim: usize) -> Result<Self> {
        Self::new(family, lengthscale, 1.0, input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "signal_variance must lie in (0, 1], got {}",
                self.signal_variance
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidInput("input_dim must be positive".into()));
        }
        Ok(())
    }
}

/// `k(x, x')` for the given spec.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], xp: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    check_dim(spec, xp)?;
    Ok(eval_unchecked(spec, x, xp))
}

fn check_dim(spec: &KernelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    Ok(())
}

fn eval_unchecked(spec: &KernelSpec, x: &[f64], xp: &[f64]) -> f64 {
    let s2 = spec.signal_variance;
    match spec.family {
        KernelFamily::Linear => s2 * x.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>(),
        KernelFamily::SquaredExponential => {
            let d2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
            s2 * (-0.5 * d2 / (spec.lengthscale * spec.lengthscale)).exp()
        }
        KernelFamily::Matern(nu) => {
            let r = x
                .iter()
                .zip(xp)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let s = r / spec.lengthscale;
            match nu {
                MaternSmoothness::OneAndHalf => {
                    let a = 3f64.sqrt() * s;
                    s2 * (1.0 + a) * (-a).exp()
                }
                MaternSmoothness::TwoAndHalf => {
                    let a = 5f64.sqrt() * s;
                    s2 * (1.0 + a + 5.0 * s * s / 3.0) * (-a).exp()
                }
            }
        }
    }
}

/// Dueling kernel between two pairs of raw vectors.
pub fn dueling_kernel(
    spec: &KernelSpec,
    z1: (&[f64], &[f64]),
    z2: (&[f64], &[f64]),
) -> Result<f64> {
    let k = |a: &[f64], b: &[f64]| eval_kernel(spec, a, b);
    Ok(k(z1.0, z2.0)? + k(z1.1, z2.1)? - k(z1.0, z2.1)? - k(z1.1, z2.0)?)
}

/// Finite, ordered action domain. Index order is the tie-break order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl ActionSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.len(),
            None => return Err(Error::InvalidInput("action set must be nonempty".into())),
        };
        if dim == 0 {
            return Err(Error::InvalidInput(
                "actions must have positive dimension".into(),
            ));
        }
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "action coordinates must be finite".into(),
            ));
        }
        Ok(ActionSet { dim, points })
    }

    /// `n` evenly spaced points on `[lo, hi]`, endpoints included.
    pub fn grid_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "grid size must be >= 2, got {n}"
            )));
        }
        let step = (hi - lo) / (n - 1) as f64;
        Self::new((0..n).map(|i| vec![lo + step * i as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.points[idx]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Every ordered pair `(i, j)` in lexicographic order, self-pairs included.
    pub fn all_pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| (0..n).map(move |j| Pair::new(i, j)))
    }
}

/// Ordered pair of action indices `(x, x')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub first: usize,
    pub second: usize,
}

impl Pair {
    pub const fn new(first: usize, second: usize) -> Self {
        Pair { first, second }
    }

    pub fn swapped(self) -> Self {
        Pair::new(self.second, self.first)
    }

    pub fn is_self_pair(self) -> bool {
        self.first == self.second
    }
}

/// Base kernel precomputed over a finite action set.
///
/// All dueling-kernel evaluations on index pairs become four table lookups.
#[derive(Debug, Clone)]
pub struct ActionKernel {
    spec: KernelSpec,
    actions: ActionSet,
    base: Vec<f64>,
}

impl ActionKernel {
    pub fn new(spec: KernelSpec, actions: ActionSet) -> Result<Self> {
        spec.validate()?;
        if actions.dim() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                got: actions.dim(),
            });
        }
        let n = actions.len();
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = eval_unchecked(&spec, actions.point(i), actions.point(j));
                base[i * n + j] = v;
                base[j * n + i] = v;
            }
        }
        Ok(ActionKernel {
            spec,
            actions,
            base,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    #[inline]
    pub fn k(&self, a: usize, b: usize) -> f64 {
        self.base[a * self.actions.len() + b]
    }

    pub fn check_pair(&self, z: Pair) -> Result<()> {
        let n = self.num_actions();
        if z.first >= n || z.second >= n {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) out of range for {n} actions",
                z.first, z.second
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dueling(&self, z1: Pair, z2: Pair) -> f64 {
        self.k(z1.first, z2.first) + self.k(z1.second, z2.second)
            - self.k(z1.first, z2.second)
            - self.k(z1.second, z2.first)
    }

    /// `kk(z, z)`, the prior variance of `h(z)`.
    #[inline]
    pub fn prior_variance(&self, z: Pair) -> f64 {
        self.k(z.first, z.first) + self.k(z.second, z.second) - 2.0 * self.k(z.first, z.second)
    }

    /// `g(x) = k(x, z.first) - k(x, z.second)`; then `kk((x, x'), z) = g(x) - g(x')`.
    #[inline]
    pub fn pair_feature(&self, x: usize, z: Pair) -> f64 {
        self.k(x, z.first) - self.k(x, z.second)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn se(l: f64) -> KernelSpec {
        KernelSpec::unit(KernelFamily::SquaredExponential, l, 1).unwrap()
    }

    #[test]
    fn se_values() {
        let spec = se(0.1);
        assert_eq!(eval_kernel(&spec, &[0.3], &[0.3]).unwrap(), 1.0);
        assert_relative_eq!(
            eval_kernel(&spec, &[0.0], &[0.1]).unwrap(),
            0.6065306597126334,
            max_relative = 1e-12
        );
    }

    #[test]
    fn matern_zero_distance_is_signal_variance() {
        for nu in [MaternSmoothness::OneAndHalf, MaternSmoothness::TwoAndHalf] {
            let spec = KernelSpec::new(KernelFamily::Matern(nu), 1.0, 1.0, 1).unwrap();
            assert_eq!(eval_kernel(&spec, &[2.0], &[2.0]).unwrap(), 1.0);
            let half = KernelSpec::new(KernelFamily::Matern(nu), 1.0, 0.5, 1).unwrap();
            assert_eq!(eval_kernel(&half, &[2.0], &[2.0]).unwrap(), 0.5);
        }
    }

    #[test]
    fn matern15_closed_form() {
        let spec =
            KernelSpec::unit(KernelFamily::Matern(MaternSmoothness::OneAndHalf), 0.5, 1).unwrap();
        let a = 3f64.sqrt() * 0.3 / 0.5;
        let expected = (1.0 + a) * (-a).exp();
        assert_relative_eq!(
            eval_kernel(&spec, &[0.1], &[0.4]).unwrap(),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = se(0.1);
        assert!(matches!(
            eval_kernel(&spec, &[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(dueling_kernel(&spec, (&[0.0], &[0.0, 1.0]), (&[0.0], &[0.0])).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(KernelSpec::unit(KernelFamily::SquaredExponential, 0.0, 1).is_err());
        assert!(KernelSpec::new(KernelFamily::SquaredExponential, 0.1, 1.5, 1).is_err());
        assert!(KernelSpec::new(KernelFamily::SquaredExponential, 0.1, 0.0, 1).is_err());
    }

    #[test]
    fn dueling_examples() {
        let spec = se(0.1);
        let x = [0.0];
        let xp = [0.1];
        assert_eq!(
            dueling_kernel(&spec, (&x, &x), (&[0.4], &[0.9])).unwrap(),
            0.0
        );
        assert_relative_eq!(
            dueling_kernel(&spec, (&x, &xp), (&x, &xp)).unwrap(),
            0.7869386805747332,
            max_relative = 1e-12
        );
    }

    #[test]
    fn action_kernel_matches_direct_evaluation() {
        let spec = se(0.2);
        let actions = ActionSet::grid_1d(0.0, 1.0, 6).unwrap();
        let ak = ActionKernel::new(spec, actions.clone()).unwrap();
        for z1 in actions.all_pairs() {
            for z2 in actions.all_pairs() {
                let direct = dueling_kernel(
                    &spec,
                    (actions.point(z1.first), actions.point(z1.second)),
                    (actions.point(z2.first), actions.point(z2.second)),
                )
                .unwrap();
                assert_relative_eq!(ak.dueling(z1, z2), direct, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn family_names_round_trip() {
        for fam in [
            KernelFamily::Linear,
            KernelFamily::SquaredExponential,
            KernelFamily::Matern(MaternSmoothness::OneAndHalf),
            KernelFamily::Matern(MaternSmoothness::TwoAndHalf),
        ] {
            assert_eq!(KernelFamily::parse(fam.short_name()).unwrap(), fam);
        }
        assert!(KernelFamily::parse("cosine").is_err());
    }

    #[test]
    fn ragged_action_set_rejected() {
        assert!(ActionSet::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(ActionSet::new(vec![]).is_err());
        assert!(ActionSet::grid_1d(0.0, 1.0, 1).is_err());
    }
}
