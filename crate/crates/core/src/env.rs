//! Utility oracles: planted RKHS functions, Ackley, embedding datasets, the
//! Bernoulli preference oracle and regret.

use std::f64::consts::{E, PI};
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::spd_solve;
use crate::kernel::{eval_kernel, ActionSet, KernelSpec, Pair};
use crate::preference::sigmoid;

/// Bounds of the utility range used by the scaled benchmarks.
pub const SCALED_RANGE: (f64, f64) = (-3.0, 3.0);

/// Latent utility of every action in a finite domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    actions: ActionSet,
    f: Vec<f64>,
    best_idx: usize,
    norm_hint: Option<f64>,
}

impl UtilityTable {
    pub fn new(actions: ActionSet, f: Vec<f64>, norm_hint: Option<f64>) -> Result<Self> {
        if f.len() != actions.len() {
            return Err(Error::DimensionMismatch {
                expected: actions.len(),
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("utility values must be finite".into()));
        }
        let best_idx = argmax_first(&f);
        Ok(UtilityTable {
            actions,
            f,
            best_idx,
            norm_hint,
        })
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.f[idx]
    }

    /// Smallest index attaining the maximum utility.
    pub fn best_idx(&self) -> usize {
        self.best_idx
    }

    /// Known RKHS norm of the utility, when it was constructed in the RKHS.
    pub fn norm_hint(&self) -> Option<f64> {
        self.norm_hint
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// `μ(f(x) - f(x'))`.
    pub fn preference_probability(&self, pair: Pair) -> f64 {
        sigmoid(self.f[pair.first] - self.f[pair.second])
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Affine map `u ↦ slope · u + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub slope: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, u: f64) -> f64 {
        self.slope * u + self.offset
    }

    /// Map sending `[min, max]` of `values` onto `[lo, hi]`. A constant input
    /// maps to the constant 0.
    pub fn onto(values: &[f64], lo: f64, hi: f64) -> Self {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return AffineMap {
                slope: 0.0,
                offset: 0.0,
            };
        }
        let slope = (hi - lo) / (max - min);
        AffineMap {
            slope,
            offset: lo - slope * min,
        }
    }
}

/// Kernel ridge regression mean through `(anchors, values)`, evaluated on
/// `grid`. Returns the fitted values and `‖f̂‖_{H_k}`.
pub fn krr_utility(
    spec: &KernelSpec,
    anchors: &[Vec<f64>],
    values: &[f64],
    lambda: f64,
    grid: &ActionSet,
) -> Result<(Vec<f64>, f64)> {
    if anchors.len() != values.len() || anchors.is_empty() {
        return Err(Error::InvalidInput(
            "anchors and values must be nonempty and of equal length".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let n = anchors.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = eval_kernel(spec, &anchors[i], &anchors[j])?;
        }
    }
    let alpha = spd_solve(&k, n, lambda, values).ok_or(Error::Factorization { jitter: 0.0 })?;
    let norm2: f64 = (0..n)
        .map(|i| alpha[i] * (0..n).map(|j| k[i * n + j] * alpha[j]).sum::<f64>())
        .sum();
    let f = grid
        .points()
        .iter()
        .map(|x| {
            anchors
                .iter()
                .zip(&alpha)
                .map(|(a, w)| Ok(w * eval_kernel(spec, x, a)?))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((f, norm2.max(0.0).sqrt()))
}

/// Planted utility in the RKHS of `spec` on `[0, 1]`: ridge regression
/// through `n_anchor` uniform anchors with values uniform in `[-1, 1]`,
/// evaluated on a uniform grid.
pub fn make_rkhs_function(
    spec: &KernelSpec,
    seed: u64,
    n_anchor: usize,
    grid_size: usize,
    lambda: f64,
) -> Result<UtilityTable> {
    if spec.input_dim != 1 {
        return Err(Error::InvalidInput(
            "RKHS test functions are one-dimensional".into(),
        ));
    }
    if n_anchor == 0 {
        return Err(Error::InvalidInput("n_anchor must be positive".into()));
    }
    let grid = ActionSet::grid_1d(0.0, 1.0, grid_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<Vec<f64>> = (0..n_anchor).map(|_| vec![rng.gen::<f64>()]).collect();
    let values: Vec<f64> = (0..n_anchor).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let (f, norm) = krr_utility(spec, &anchors, &values, lambda, &grid)?;
    UtilityTable::new(grid, f, Some(norm))
}

/// The Ackley formula used by the benchmark, evaluated verbatim in one
/// dimension: `-20 e^{-0.2 |x|} e^{cos 2πx} + 20 + e`.
pub fn ackley_raw(x: f64) -> f64 {
    -20.0 * (-0.2 * (x * x).sqrt()).exp() * (2.0 * PI * x).cos().exp() + 20.0 + E
}

/// Ackley benchmark on a uniform grid over `[-5, 5]`.
///
/// The utility is the negated formula (maximum at `x = 0`) rescaled onto
/// `[-3, 3]`. Action coordinates are normalized to `[0, 1]` so the kernel
/// lengthscale means the same thing as on the RKHS benchmarks.
pub fn make_ackley(grid_size: usize) -> Result<UtilityTable> {
    let raw_grid = ActionSet::grid_1d(-5.0, 5.0, grid_size)?;
    let utility: Vec<f64> = raw_grid
        .points()
        .iter()
        .map(|x| -ackley_raw(x[0]))
        .collect();
    let map = AffineMap::onto(&utility, SCALED_RANGE.0, SCALED_RANGE.1);
    let f = utility.iter().map(|&u| map.apply(u)).collect();
    UtilityTable::new(ActionSet::grid_1d(0.0, 1.0, grid_size)?, f, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Csv,
    Tsv,
}

impl DatasetFormat {
    fn delimiter(self) -> u8 {
        match self {
            DatasetFormat::Csv => b',',
            DatasetFormat::Tsv => b'\t',
        }
    }

    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => DatasetFormat::Tsv,
            _ => DatasetFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingItem {
    pub id: String,
    pub embedding: Vec<f64>,
    /// Utility as stored in the file, before scaling.
    pub utility: f64,
    pub user_id: Option<String>,
}

/// Items with precomputed embeddings and raw utilities.
///
/// File layout (header required verbatim): `id,u_1,...,u_d,utility` with an
/// optional trailing `user_id` column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDataset {
    pub items: Vec<EmbeddingItem>,
    pub dim: usize,
    pub has_user_column: bool,
    pub scaling: AffineMap,
}

impl EmbeddingDataset {
    pub fn from_items(items: Vec<EmbeddingItem>, has_user_column: bool) -> Result<Self> {
        let dim = items.first().map(|i| i.embedding.len()).unwrap_or(0);
        if let Some(bad) = items.iter().find(|i| i.embedding.len() != dim) {
            return Err(Error::Schema(format!(
                "item `{}` has dimension {}, expected {dim}",
                bad.id,
                bad.embedding.len()
            )));
        }
        let raw: Vec<f64> = items.iter().map(|i| i.utility).collect();
        let scaling = AffineMap::onto(&raw, SCALED_RANGE.0, SCALED_RANGE.1);
        Ok(EmbeddingDataset {
            items,
            dim,
            has_user_column,
            scaling,
        })
    }

    pub fn scaled_utilities(&self) -> Vec<f64> {
        self.items
            .iter()
            .map(|i| self.scaling.apply(i.utility))
            .collect()
    }

    /// Distinct user ids in order of first appearance.
    pub fn users(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for u in self.items.iter().filter_map(|i| i.user_id.as_ref()) {
            if !out.contains(u) {
                out.push(u.clone());
            }
        }
        out
    }

    /// Restricts to one user's rows and rescales their utilities.
    pub fn for_user(&self, user: &str) -> Result<Self> {
        let items: Vec<EmbeddingItem> = self
            .items
            .iter()
            .filter(|i| i.user_id.as_deref() == Some(user))
            .cloned()
            .collect();
        if items.is_empty() {
            return Err(Error::InvalidInput(format!("no rows for user `{user}`")));
        }
        Self::from_items(items, self.has_user_column)
    }

    pub fn table(&self) -> Result<UtilityTable> {
        let actions = ActionSet::new(self.items.iter().map(|i| i.embedding.clone()).collect())?;
        UtilityTable::new(actions, self.scaled_utilities(), None)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string()];
        h.extend((1..=self.dim).map(|i| format!("u_{i}")));
        h.push("utility".into());
        if self.has_user_column {
            h.push("user_id".into());
        }
        h
    }
}

/// Loads an embedding dataset, optionally keeping only one user's rows.
pub fn load_embedding_dataset(
    path: &Path,
    format: DatasetFormat,
    user: Option<&str>,
) -> Result<EmbeddingDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(Error::Schema("empty file".into())),
    };
    let cols: Vec<&str> = header.iter().collect();
    let has_user = cols.last() == Some(&"user_id");
    let utility_col = if has_user {
        cols.len() - 2
    } else {
        cols.len() - 1
    };
    let dim = utility_col.saturating_sub(1);
    let expected: Vec<String> = std::iter::once("id".to_string())
        .chain((1..=dim).map(|i| format!("u_{i}")))
        .chain(std::iter::once("utility".to_string()))
        .chain(has_user.then(|| "user_id".to_string()))
        .collect();
    if dim == 0 || cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Schema(format!(
            "header must be `id,u_1..u_d,utility[,user_id]`, got `{}`",
            cols.join(",")
        )));
    }

    let mut items = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(Error::Schema(format!(
                "line {line}: expected {} fields, found {}",
                expected.len(),
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            let raw = &rec[i];
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: `{raw}` is not a number", expected[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{}` is not finite", expected[i]),
                });
            }
            Ok(v)
        };
        let embedding = (1..=dim).map(num).collect::<Result<Vec<_>>>()?;
        let utility = num(utility_col)?;
        let user_id = has_user.then(|| rec[utility_col + 1].to_string());
        if let (Some(want), Some(got)) = (user, user_id.as_deref()) {
            if want != got {
                continue;
            }
        }
        items.push(EmbeddingItem {
            id: rec[0].to_string(),
            embedding,
            utility,
            user_id,
        });
    }
    if items.is_empty() {
        return Err(Error::Schema(match user {
            Some(u) => format!("no rows for user `{u}`"),
            None => "no data rows".into(),
        }));
    }
    EmbeddingDataset::from_items(items, has_user)
}

/// Writes the dataset in the same layout [`load_embedding_dataset`] reads,
/// with raw utilities.
pub fn write_embedding_dataset(
    dataset: &EmbeddingDataset,
    path: &Path,
    format: DatasetFormat,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_writer(File::create(path)?);
    w.write_record(dataset.header())?;
    for item in &dataset.items {
        let mut row = vec![item.id.clone()];
        row.extend(item.embedding.iter().map(|v| v.to_string()));
        row.push(item.utility.to_string());
        if dataset.has_user_column {
            row.push(item.user_id.clone().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Draws `y ~ Bernoulli(μ(f(x) - f(x')))`; `true` means the first action won.
pub fn preference_oracle<R: Rng + ?Sized>(table: &UtilityTable, pair: Pair, rng: &mut R) -> bool {
    rng.gen::<f64>() < table.preference_probability(pair)
}

/// `[μ(f* - f(x)) + μ(f* - f(x')) - 1] / 2`.
pub fn instantaneous_regret(table: &UtilityTable, pair: Pair) -> f64 {
    let best = table.value(table.best_idx());
    let gap = |i: usize| sigmoid(best - table.value(i));
    (gap(pair.first) + gap(pair.second) - 1.0) / 2.0
}

/// Source of preference feedback for a run.
pub trait PreferenceEnv {
    fn num_actions(&self) -> usize;

    /// Feedback for `pair`; `true` means the first action is preferred.
    fn query(&mut self, pair: Pair) -> Result<bool>;

    /// Regret of querying `pair`, when the environment knows the utility.
    fn regret(&self, pair: Pair) -> f64;
}

/// Seeded Bernoulli oracle over a utility table.
#[derive(Debug, Clone)]
pub struct SimulatedEnv {
    table: Arc<UtilityTable>,
    rng: ChaCha8Rng,
}

impl SimulatedEnv {
    pub fn new(table: Arc<UtilityTable>, seed: u64) -> Self {
        SimulatedEnv {
            table,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn table(&self) -> &Arc<UtilityTable> {
        &self.table
    }
}

impl PreferenceEnv for SimulatedEnv {
    fn num_actions(&self) -> usize {
        self.table.len()
    }

    fn query(&mut self, pair: Pair) -> Result<bool> {
        if pair.first >= self.table.len() || pair.second >= self.table.len() {
            return Err(Error::InvalidInput(format!("pair {pair:?} out of range")));
        }
        Ok(preference_oracle(&self.table, pair, &mut self.rng))
    }

    fn regret(&self, pair: Pair) -> f64 {
        instantaneous_regret(&self.table, pair)
    }
}

/// Replays a fixed answer sequence; regret is taken from an optional table.
#[derive(Debug, Clone)]
pub struct ScriptedEnv {
    answers: Vec<bool>,
    next: usize,
    table: Option<Arc<UtilityTable>>,
    n_actions: usize,
}

impl ScriptedEnv {
    pub fn new(answers: Vec<bool>, n_actions: usize, table: Option<Arc<UtilityTable>>) -> Self {
        ScriptedEnv {
            answers,
            next: 0,
            table,
            n_actions,
        }
    }
}

impl PreferenceEnv for ScriptedEnv {
    fn num_actions(&self) -> usize {
        self.n_actions
    }

    fn query(&mut self, _pair: Pair) -> Result<bool> {
        let y = self
            .answers
            .get(self.next)
            .copied()
            .ok_or_else(|| Error::Environment {
                step: self.next + 1,
                message: "script exhausted".into(),
            })?;
        self.next += 1;
        Ok(y)
    }

    fn regret(&self, pair: Pair) -> f64 {
        self.table
            .as_ref()
            .map_or(0.0, |t| instantaneous_regret(t, pair))
    }
}

/// Writes a synthetic dataset in the embedding file layout. Useful for
/// demos and tests; embeddings are standard normal-ish, utilities in 1..=5.
pub fn write_synthetic_dataset(
    path: &Path,
    n_items: usize,
    dim: usize,
    users: &[&str],
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = File::create(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=dim).map(|i| format!("u_{i}")));
    header.push("utility".into());
    if !users.is_empty() {
        header.push("user_id".into());
    }
    writeln!(out, "{}", header.join(","))?;
    let embeddings: Vec<Vec<f64>> = (0..n_items)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let user_iter: Vec<Option<&str>> = if users.is_empty() {
        vec![None]
    } else {
        users.iter().map(|u| Some(*u)).collect()
    };
    for user in user_iter {
        for (i, e) in embeddings.iter().enumerate() {
            let rating = rng.gen_range(1..=5) as f64;
            let mut row = vec![format!("item{i}")];
            row.extend(e.iter().map(|v| v.to_string()));
            row.push(rating.to_string());
            if let Some(u) = user {
                row.push(u.to_string());
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use approx::assert_relative_eq;

    #[test]
    fn ackley_orientation_and_range() {
        assert_relative_eq!(ackley_raw(0.0), -20.0 * E + 20.0 + E, max_relative = 1e-15);
        let t = make_ackley(101).unwrap();
        assert_eq!(t.best_idx(), 50);
        let hi = t.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = t.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(hi, 3.0, epsilon = 1e-12);
        assert_relative_eq!(lo, -3.0, epsilon = 1e-12);
        for i in 0..101 {
            assert_relative_eq!(t.value(i), t.value(100 - i), epsilon = 1e-12);
        }
    }

    #[test]
    fn rkhs_function_is_deterministic() {
        let spec = KernelSpec::unit(KernelFamily::SquaredExponential, 0.1, 1).unwrap();
        let a = make_rkhs_function(&spec, 7, 10, 50, 0.05).unwrap();
        let b = make_rkhs_function(&spec, 7, 10, 50, 0.05).unwrap();
        assert_eq!(a, b);
        assert!(a.norm_hint().unwrap() > 0.0);
        assert!(make_rkhs_function(&spec, 7, 10, 1, 0.05).is_err());
    }

    #[test]
    fn constant_anchor_values_interpolate() {
        let spec = KernelSpec::unit(KernelFamily::SquaredExponential, 0.1, 1).unwrap();
        let anchors: Vec<Vec<f64>> = (0..10).map(|i| vec![0.05 + 0.1 * i as f64]).collect();
        let grid = ActionSet::new(anchors.clone()).unwrap();
        let (f, _) = krr_utility(&spec, &anchors, &[0.7; 10], 1e-9, &grid).unwrap();
        for v in f {
            assert!((v - 0.7).abs() < 1e-3);
        }
    }

    #[test]
    fn regret_examples() {
        let actions = ActionSet::grid_1d(0.0, 1.0, 3).unwrap();
        let t = UtilityTable::new(actions, vec![0.0, 10.0, 0.0], None).unwrap();
        assert_eq!(t.best_idx(), 1);
        assert_eq!(instantaneous_regret(&t, Pair::new(1, 1)), 0.0);
        assert_relative_eq!(
            instantaneous_regret(&t, Pair::new(0, 2)),
            0.4999546021312976,
            max_relative = 1e-12
        );
        for z in t.actions().all_pairs() {
            assert!(instantaneous_regret(&t, z) <= 0.5);
        }
    }

    #[test]
    fn best_idx_prefers_smallest_index() {
        let actions = ActionSet::grid_1d(0.0, 1.0, 4).unwrap();
        let t = UtilityTable::new(actions, vec![1.0, 2.0, 2.0, 0.0], None).unwrap();
        assert_eq!(t.best_idx(), 1);
    }

    #[test]
    fn affine_map_degenerate() {
        let m = AffineMap::onto(&[4.0], -3.0, 3.0);
        assert_eq!(m.apply(4.0), 0.0);
        let m = AffineMap::onto(&[1.0, 5.0], -3.0, 3.0);
        assert_eq!(m.apply(1.0), -3.0);
        assert_eq!(m.apply(5.0), 3.0);
    }

    #[test]
    fn scripted_env_exhausts() {
        let mut env = ScriptedEnv::new(vec![true], 2, None);
        assert!(env.query(Pair::new(0, 1)).unwrap());
        assert!(matches!(
            env.query(Pair::new(0, 1)),
            Err(Error::Environment { step: 2, .. })
        ));
    }
}
