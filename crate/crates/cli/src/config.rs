//! Run settings from flags and an optional flat TOML file.
//!
//! Every key is optional; a flag beats the file, the file beats the default.
//! File keys match the long flag names with `_` for `-`:
//!
//! ```toml
//! algo = "mrlpf"
//! env = "rkhs"
//! kernel = "matern25"
//! T = 300
//! runs = 30
//! beta = 1.0          # or "theoretical"
//! kappa = "oracle"    # or "bound", or a number
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use prefbo_core::experiment::{Algorithm, Environment, ExperimentConfig, KappaChoice};
use prefbo_core::{BetaMode, KernelFamily};
use serde::{Deserialize, Deserializer};

fn num_or_str<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    Ok(Option::<Raw>::deserialize(d)?.map(|r| match r {
        Raw::Num(v) => v.to_string(),
        Raw::Str(s) => s,
    }))
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    /// `mrlpf` or `maxminlcb`.
    #[arg(long)]
    pub algo: Option<String>,
    /// `rkhs`, `ackley` or `embedding`.
    #[arg(long)]
    pub env: Option<String>,
    /// `se`, `matern15`, `matern25` or `linear`.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Grid size for the rkhs and ackley environments.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Anchor count of the rkhs test function.
    #[arg(long)]
    pub anchors: Option<usize>,
    /// Seed of the rkhs test function; defaults to --seed.
    #[arg(long)]
    pub function_seed: Option<u64>,
    /// Keep the rkhs function on its natural scale instead of [-3, 3].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_rescale: Option<bool>,
    /// Embedding file (`id,u_1..u_d,utility[,user_id]`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// User id within the dataset; drawn per run when omitted.
    #[arg(long)]
    pub user: Option<String>,
    /// Query budget.
    #[arg(long = "T")]
    #[serde(rename = "T", alias = "horizon")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for trace and summary files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// A positive number or `theoretical`.
    #[arg(long)]
    #[serde(default, deserialize_with = "num_or_str")]
    pub beta: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Norm bound B; defaults to the environment's hint.
    #[arg(long)]
    pub b: Option<f64>,
    /// Link-derivative bound L.
    #[arg(long)]
    pub l: Option<f64>,
    /// `oracle`, `bound` or a number >= 4.
    #[arg(long)]
    #[serde(default, deserialize_with = "num_or_str")]
    pub kappa: Option<String>,
    #[arg(long)]
    pub lengthscale: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Gradient-descent learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// MaxMinLCB refit cadence.
    #[arg(long)]
    pub refit_every: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub parallel: Option<usize>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),+) => {
        RunSettings { $($f: $hi.$f.or($lo.$f)),+ }
    };
}

impl RunSettings {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set here win over `lower`.
    pub fn over(self, lower: RunSettings) -> Self {
        overlay!(
            self,
            lower,
            algo,
            env,
            kernel,
            grid,
            anchors,
            function_seed,
            no_rescale,
            dataset,
            user,
            horizon,
            runs,
            seed,
            out,
            beta,
            delta,
            b,
            l,
            kappa,
            lengthscale,
            lambda,
            lr,
            max_iters,
            refit_every,
            parallel
        )
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let algorithm = match &self.algo {
            Some(a) => Algorithm::parse(a)?,
            None => d.algorithm,
        };
        let kernel = match &self.kernel {
            Some(k) => KernelFamily::parse(k)?,
            None => d.kernel,
        };
        let environment = match self.env.as_deref().unwrap_or("rkhs") {
            "rkhs" => Environment::Rkhs {
                grid_size: self.grid.unwrap_or(100),
                n_anchor: self.anchors.unwrap_or(10),
                function_seed: self.function_seed,
                rescale: !self.no_rescale.unwrap_or(false),
            },
            "ackley" => Environment::Ackley {
                grid_size: self.grid.unwrap_or(100),
            },
            "embedding" => Environment::Embedding {
                path: self
                    .dataset
                    .clone()
                    .context("--env embedding needs --dataset")?,
                user: self.user.clone(),
            },
            other => bail!("unknown environment `{other}` (expected rkhs, ackley or embedding)"),
        };
        let beta = match self.beta.as_deref() {
            None => d.beta,
            Some("theoretical") => BetaMode::Theoretical,
            Some(v) => BetaMode::Fixed(v.parse().with_context(|| format!("invalid beta `{v}`"))?),
        };
        let kappa = match self.kappa.as_deref() {
            None => d.kappa,
            Some("oracle") => KappaChoice::Oracle,
            Some("bound") => KappaChoice::Bound,
            Some(v) => {
                KappaChoice::Fixed(v.parse().with_context(|| format!("invalid kappa `{v}`"))?)
            }
        };
        let mut fit = d.fit;
        if let Some(l) = self.lambda {
            fit.lambda = l;
        }
        if let Some(lr) = self.lr {
            fit.learning_rate = lr;
        }
        if let Some(it) = self.max_iters {
            fit.max_iters = it;
        }
        let config = ExperimentConfig {
            algorithm,
            environment,
            kernel,
            lengthscale: self.lengthscale.unwrap_or(d.lengthscale),
            horizon: self.horizon.unwrap_or(d.horizon),
            n_runs: self.runs.unwrap_or(d.n_runs),
            base_seed: self.seed.unwrap_or(d.base_seed),
            beta,
            delta: self.delta.unwrap_or(d.delta),
            b: self.b.or(d.b),
            l: self.l.unwrap_or(d.l),
            kappa,
            fit,
            refit_every: self.refit_every.unwrap_or(d.refit_every),
            parallel: self.parallel.unwrap_or(d.parallel),
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: RunSettings =
            toml::from_str("T = 50\nruns = 4\nbeta = 0.5\nkappa = \"bound\"\n").unwrap();
        let flags = RunSettings {
            runs: Some(2),
            ..RunSettings::default()
        };
        let c = flags.over(file).to_experiment().unwrap();
        assert_eq!(c.horizon, 50);
        assert_eq!(c.n_runs, 2);
        assert_eq!(c.beta, BetaMode::Fixed(0.5));
        assert_eq!(c.kappa, KappaChoice::Bound);
        assert_eq!(c.lengthscale, 0.1);
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        assert!(toml::from_str::<RunSettings>("horizn = 3\n").is_err());
        let bad = RunSettings {
            env: Some("moon".into()),
            ..RunSettings::default()
        };
        assert!(bad.to_experiment().is_err());
        let bad = RunSettings {
            beta: Some("lots".into()),
            ..RunSettings::default()
        };
        assert!(bad.to_experiment().is_err());
    }
}
