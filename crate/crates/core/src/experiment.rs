//! Seeded experiment batches: build an environment, run one algorithm over
//! many seeds, aggregate the average-regret curves and write CSV files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    load_embedding_dataset, make_ackley, make_rkhs_function, AffineMap, DatasetFormat,
    SimulatedEnv, UtilityTable, SCALED_RANGE,
};
use crate::error::{Error, Result};
use crate::kernel::{ActionKernel, KernelFamily, KernelSpec};
use crate::maxminlcb::{run_maxminlcb, MaxMinLcbConfig};
use crate::mrlpf::{run_mrlpf, BetaMode, MrlpfConfig};
use crate::preference::{kappa_bound, kappa_exact, FitConfig};
use crate::trace::RegretTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mrlpf,
    MaxMinLcb,
}

impl Algorithm {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mrlpf" => Ok(Algorithm::Mrlpf),
            "maxminlcb" => Ok(Algorithm::MaxMinLcb),
            other => Err(Error::InvalidInput(format!("unknown algorithm `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mrlpf => "mrlpf",
            Algorithm::MaxMinLcb => "maxminlcb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Environment {
    /// Ridge-regression test function on a uniform grid over `[0, 1]`.
    /// `function_seed` fixes the function across runs; `None` uses the
    /// batch's base seed. With `rescale` the utility is mapped affinely
    /// onto `[-3, 3]` like the other benchmarks.
    Rkhs {
        grid_size: usize,
        n_anchor: usize,
        function_seed: Option<u64>,
        rescale: bool,
    },
    Ackley {
        grid_size: usize,
    },
    /// Embedding file. Without a user, each run draws one at random when the
    /// file has a user column.
    Embedding {
        path: PathBuf,
        user: Option<String>,
    },
}

/// How the curvature constant of the first window is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KappaChoice {
    /// `2 + e^Δ + e^{-Δ}` from the true utility range.
    Oracle,
    /// `2 + e^{2B} + e^{-2B}`.
    Bound,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub environment: Environment,
    pub kernel: KernelFamily,
    pub lengthscale: f64,
    pub horizon: usize,
    pub n_runs: usize,
    pub base_seed: u64,
    pub beta: BetaMode,
    pub delta: f64,
    /// Norm bound; defaults to the environment's hint, else 1.
    pub b: Option<f64>,
    pub l: f64,
    pub kappa: KappaChoice,
    pub fit: FitConfig,
    pub refit_every: usize,
    /// Worker threads; 0 means one per available core.
    pub parallel: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Mrlpf,
            environment: Environment::Rkhs {
                grid_size: 100,
                n_anchor: 10,
                function_seed: None,
                rescale: true,
            },
            kernel: KernelFamily::SquaredExponential,
            lengthscale: 0.1,
            horizon: 300,
            n_runs: 30,
            base_seed: 0,
            beta: BetaMode::Fixed(1.0),
            delta: 0.05,
            b: None,
            l: 0.25,
            kappa: KappaChoice::Oracle,
            fit: FitConfig::default(),
            refit_every: 1,
            parallel: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidInput("runs must be >= 1".into()));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidInput(format!(
                "T must be >= 2, got {}",
                self.horizon
            )));
        }
        if !(self.lengthscale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if let Some(b) = self.b {
            if !(b > 0.0) {
                return Err(Error::InvalidInput(format!("B must be positive, got {b}")));
            }
        }
        match &self.environment {
            Environment::Rkhs {
                grid_size,
                n_anchor,
                ..
            } => {
                if *grid_size < 2 || *n_anchor == 0 {
                    return Err(Error::InvalidInput(
                        "rkhs needs grid_size >= 2 and n_anchor >= 1".into(),
                    ));
                }
            }
            Environment::Ackley { grid_size } if *grid_size < 2 => {
                return Err(Error::InvalidInput("ackley needs grid_size >= 2".into()));
            }
            Environment::Embedding { path, .. } if !path.is_file() => {
                return Err(Error::InvalidInput(format!(
                    "dataset `{}` not found",
                    path.display()
                )));
            }
            _ => {}
        }
        self.fit.validate()
    }

    pub fn seed_for(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

/// Utility table plus the kernel over its actions.
#[derive(Debug, Clone)]
pub struct Instance {
    pub table: Arc<UtilityTable>,
    pub kernel: Arc<ActionKernel>,
}

impl Instance {
    pub fn new(table: UtilityTable, family: KernelFamily, lengthscale: f64) -> Result<Self> {
        let spec = KernelSpec::unit(family, lengthscale, table.actions().dim())?;
        let kernel = ActionKernel::new(spec, table.actions().clone())?;
        Ok(Instance {
            table: Arc::new(table),
            kernel: Arc::new(kernel),
        })
    }
}

/// Builds the environment shared by every run, or `None` when it depends on
/// the run (per-run user draws).
fn shared_instance(config: &ExperimentConfig) -> Result<Option<Instance>> {
    let table = match &config.environment {
        Environment::Rkhs {
            grid_size,
            n_anchor,
            function_seed,
            rescale,
        } => {
            let spec = KernelSpec::unit(config.kernel, config.lengthscale, 1)?;
            let seed = function_seed.unwrap_or(config.base_seed);
            let table = make_rkhs_function(&spec, seed, *n_anchor, *grid_size, config.fit.lambda)?;
            if *rescale {
                rescale_table(&table)?
            } else {
                table
            }
        }
        Environment::Ackley { grid_size } => make_ackley(*grid_size)?,
        Environment::Embedding { path, user } => {
            let data =
                load_embedding_dataset(path, DatasetFormat::from_path(path), user.as_deref())?;
            if user.is_none() && data.has_user_column && data.users().len() > 1 {
                return Ok(None);
            }
            data.table()?
        }
    };
    Instance::new(table, config.kernel, config.lengthscale).map(Some)
}

/// Maps utilities onto the benchmark range; the norm hint scales along.
fn rescale_table(table: &UtilityTable) -> Result<UtilityTable> {
    let map = AffineMap::onto(table.values(), SCALED_RANGE.0, SCALED_RANGE.1);
    let f = table.values().iter().map(|&v| map.apply(v)).collect();
    let hint = table.norm_hint().map(|b| b * map.slope.abs());
    UtilityTable::new(table.actions().clone(), f, hint)
}

fn run_instance(config: &ExperimentConfig, run: usize) -> Result<Instance> {
    let Environment::Embedding { path, .. } = &config.environment else {
        unreachable!("only embedding environments vary per run");
    };
    let data = load_embedding_dataset(path, DatasetFormat::from_path(path), None)?;
    let users = data.users();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed_for(run));
    let user = &users[rng.gen_range(0..users.len())];
    Instance::new(
        data.for_user(user)?.table()?,
        config.kernel,
        config.lengthscale,
    )
}

fn resolve_b(config: &ExperimentConfig, table: &UtilityTable) -> f64 {
    config.b.or(table.norm_hint()).unwrap_or(1.0)
}

fn resolve_kappa(config: &ExperimentConfig, table: &UtilityTable) -> Result<f64> {
    let k = match config.kappa {
        KappaChoice::Oracle => kappa_exact(table.values()),
        KappaChoice::Bound => kappa_bound(resolve_b(config, table))?,
        KappaChoice::Fixed(k) => k,
    };
    Ok(k.max(4.0))
}

/// MR-LPF settings for `instance` under `config`.
pub fn mrlpf_config(config: &ExperimentConfig, table: &UtilityTable) -> Result<MrlpfConfig> {
    let mut c = MrlpfConfig::new(
        config.horizon,
        config.fit,
        config.beta,
        resolve_kappa(config, table)?,
    );
    c.delta = config.delta;
    c.b = resolve_b(config, table);
    c.l = config.l;
    Ok(c)
}

/// MaxMinLCB settings for `instance` under `config`. A theoretical β is not
/// defined for the baseline, so it falls back to 1.
pub fn maxminlcb_config(
    config: &ExperimentConfig,
    table: &UtilityTable,
) -> Result<MaxMinLcbConfig> {
    let beta = match config.beta {
        BetaMode::Fixed(b) => b,
        BetaMode::Theoretical => 1.0,
    };
    let mut c = MaxMinLcbConfig::new(
        config.horizon,
        beta,
        resolve_kappa(config, table)?,
        config.fit,
    );
    c.refit_every = config.refit_every;
    Ok(c)
}

fn run_on(config: &ExperimentConfig, instance: &Instance, seed: u64) -> Result<RegretTrace> {
    let mut env = SimulatedEnv::new(Arc::clone(&instance.table), seed);
    let kernel = Arc::clone(&instance.kernel);
    match config.algorithm {
        Algorithm::Mrlpf => run_mrlpf(&mut env, kernel, mrlpf_config(config, &instance.table)?),
        Algorithm::MaxMinLcb => {
            run_maxminlcb(&mut env, kernel, maxminlcb_config(config, &instance.table)?)
        }
    }
}

/// Environment instance used by run `run`.
pub fn instance_for_run(config: &ExperimentConfig, run: usize) -> Result<Instance> {
    match shared_instance(config)? {
        Some(i) => Ok(i),
        None => run_instance(config, run),
    }
}

/// Executes run `run` alone; identical to the corresponding batch run.
pub fn run_single(config: &ExperimentConfig, run: usize) -> Result<RegretTrace> {
    config.validate()?;
    let instance = instance_for_run(config, run)?;
    run_on(config, &instance, config.seed_for(run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub algorithm: Algorithm,
    pub n_runs: usize,
    /// Mean average regret at each step `t = 1..=T`.
    pub mean: Vec<f64>,
    /// Sample standard deviation over runs divided by `√n`.
    pub std_err: Vec<f64>,
}

impl AggregateSummary {
    pub fn from_traces(algorithm: Algorithm, traces: &[RegretTrace]) -> Result<Self> {
        let n = traces.len();
        if n == 0 {
            return Err(Error::InvalidInput("no traces to aggregate".into()));
        }
        let len = traces[0].len();
        if traces.iter().any(|t| t.len() != len) {
            return Err(Error::InvalidInput("traces have different lengths".into()));
        }
        let mut mean = Vec::with_capacity(len);
        let mut std_err = Vec::with_capacity(len);
        for i in 0..len {
            let (m, se) = mean_and_std_err(traces.iter().map(|t| t.steps[i].avg_regret));
            mean.push(m);
            std_err.push(se);
        }
        Ok(AggregateSummary {
            algorithm,
            n_runs: n,
            mean,
            std_err,
        })
    }

    pub fn final_mean(&self) -> f64 {
        *self.mean.last().unwrap_or(&0.0)
    }

    pub fn final_std_err(&self) -> f64 {
        *self.std_err.last().unwrap_or(&0.0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,mean_avg_regret,std_err,n_runs")?;
        for (i, (m, s)) in self.mean.iter().zip(&self.std_err).enumerate() {
            writeln!(out, "{},{},{},{}", i + 1, m, s, self.n_runs)?;
        }
        Ok(())
    }
}

/// Mean and standard error (`0` for a single sample).
pub fn mean_and_std_err(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: AggregateSummary,
    pub traces: Vec<RegretTrace>,
}

/// Runs the whole batch. Runs are independent and seeded by index, so the
/// result does not depend on the degree of parallelism.
pub fn run_batch(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let shared = shared_instance(config)?;
    let one = |run: usize| -> Result<RegretTrace> {
        let seed = config.seed_for(run);
        let wrap = |e| Error::Run {
            seed,
            source: Box::new(e),
        };
        let instance = match &shared {
            Some(i) => i.clone(),
            None => run_instance(config, run).map_err(wrap)?,
        };
        run_on(config, &instance, seed).map_err(wrap)
    };

    let results: Vec<Result<RegretTrace>> = if config.parallel == 1 {
        (0..config.n_runs).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallel)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.n_runs).into_par_iter().map(one).collect())
    };
    let traces = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = AggregateSummary::from_traces(config.algorithm, &traces)?;
    Ok(ExperimentOutput { summary, traces })
}

/// Runs the batch and writes `trace_run{i}.csv` per run plus `summary.csv`
/// into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let output = run_batch(config)?;
    write_outputs(&output, out_dir)?;
    Ok(output)
}

pub fn write_outputs(output: &ExperimentOutput, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for (i, trace) in output.traces.iter().enumerate() {
        let mut w = BufWriter::new(File::create(out_dir.join(format!("trace_run{i}.csv")))?);
        trace.write_csv(i, &mut w)?;
        w.flush()?;
    }
    let mut w = BufWriter::new(File::create(out_dir.join("summary.csv"))?);
    output.summary.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}
