use std::fs;
use std::sync::Arc;

use prefbo_core::env::{preference_oracle, SimulatedEnv, UtilityTable};
use prefbo_core::experiment::{
    run_batch, run_experiment, run_single, Algorithm, Environment, ExperimentConfig, KappaChoice,
};
use prefbo_core::maxminlcb::run_maxminlcb;
use prefbo_core::mrlpf::run_mrlpf;
use prefbo_core::preference::{kappa_exact, FitConfig};
use prefbo_core::{
    ActionKernel, ActionSet, BetaMode, KernelFamily, KernelSpec, MaxMinLcbConfig, MrlpfConfig, Pair,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn two_point_table(f: [f64; 2]) -> UtilityTable {
    UtilityTable::new(ActionSet::grid_1d(0.0, 1.0, 2).unwrap(), f.to_vec(), None).unwrap()
}

fn empirical_mean(table: &UtilityTable, pair: Pair, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wins = (0..10_000)
        .filter(|_| preference_oracle(table, pair, &mut rng))
        .count();
    wins as f64 / 10_000.0
}

#[test]
fn oracle_matches_link_probabilities() {
    let equal = two_point_table([0.7, 0.7]);
    let m = empirical_mean(&equal, Pair::new(0, 1), 1);
    assert!((0.485..=0.515).contains(&m), "{m}");

    let wide = two_point_table([10.0, 0.0]);
    assert!(empirical_mean(&wide, Pair::new(0, 1), 2) >= 0.999);

    let mid = two_point_table([0.8, -0.4]);
    let fwd = empirical_mean(&mid, Pair::new(0, 1), 3);
    let back = empirical_mean(&mid, Pair::new(1, 0), 4);
    assert!((fwd + back - 1.0).abs() <= 0.02, "{fwd} + {back}");
}

#[test]
fn oracle_is_reproducible_per_seed() {
    let table = two_point_table([0.3, -0.2]);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..500)
            .map(|_| preference_oracle(&table, Pair::new(0, 1), &mut rng))
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}

/// Two well-separated actions with `μ(f(x*) - f(x₂)) = 0.9`.
fn planted_pair() -> (Arc<UtilityTable>, Arc<ActionKernel>) {
    let gap = 9f64.ln();
    let table = Arc::new(two_point_table([gap / 2.0, -gap / 2.0]));
    let spec = KernelSpec::unit(KernelFamily::SquaredExponential, 0.2, 1).unwrap();
    let kernel = Arc::new(ActionKernel::new(spec, table.actions().clone()).unwrap());
    (table, kernel)
}

#[test]
fn mrlpf_keeps_the_best_of_two_actions() {
    let (table, kernel) = planted_pair();
    assert!((table.preference_probability(Pair::new(0, 1)) - 0.9).abs() < 1e-12);
    let mut retained = 0;
    for seed in 0..100 {
        let mut cfg = MrlpfConfig::new(
            100,
            FitConfig::default(),
            BetaMode::Theoretical,
            kappa_exact(table.values()),
        );
        cfg.delta = 0.05;
        // ‖f‖ in the RKHS: the Gram matrix is numerically the identity here.
        cfg.b = 2.0;
        let mut env = SimulatedEnv::new(Arc::clone(&table), seed);
        let trace = run_mrlpf(&mut env, Arc::clone(&kernel), cfg).unwrap();
        assert_eq!(trace.len(), 100);
        retained += usize::from(trace.final_candidates.contains(&table.best_idx()));
    }
    assert!(retained >= 95, "x* retained in {retained}/100 runs");
}

#[test]
fn maxminlcb_settles_on_the_better_of_two_actions() {
    let (table, kernel) = planted_pair();
    let mut good = 0;
    for seed in 0..50 {
        let cfg = MaxMinLcbConfig::new(200, 1.0, kappa_exact(table.values()), FitConfig::default());
        let mut env = SimulatedEnv::new(Arc::clone(&table), seed);
        let trace = run_maxminlcb(&mut env, Arc::clone(&kernel), cfg).unwrap();
        assert_eq!(trace.len(), 200);
        good += usize::from(trace.avg_regret_at(200).unwrap() < 0.15);
    }
    assert!(good >= 40, "average regret below 0.15 in {good}/50 runs");
}

#[test]
fn single_action_runs_have_zero_regret() {
    let table = Arc::new(
        UtilityTable::new(ActionSet::new(vec![vec![0.5]]).unwrap(), vec![0.0], None).unwrap(),
    );
    let spec = KernelSpec::unit(KernelFamily::SquaredExponential, 0.1, 1).unwrap();
    let kernel = Arc::new(ActionKernel::new(spec, table.actions().clone()).unwrap());
    let cfg = MrlpfConfig::new(2, FitConfig::default(), BetaMode::Fixed(1.0), 4.0);
    let trace = run_mrlpf(
        &mut SimulatedEnv::new(Arc::clone(&table), 0),
        Arc::clone(&kernel),
        cfg,
    )
    .unwrap();
    assert!(trace
        .steps
        .iter()
        .all(|s| s.pair == Pair::new(0, 0) && s.inst_regret == 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    fs::write(&path, "id,u_1,utility\nonly,0.25,4\n").unwrap();
    let config = ExperimentConfig {
        environment: Environment::Embedding { path, user: None },
        horizon: 2,
        n_runs: 1,
        ..ExperimentConfig::default()
    };
    let out = run_batch(&config).unwrap();
    assert_eq!(out.summary.mean, vec![0.0, 0.0]);
}

fn ackley_config(algorithm: Algorithm) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        environment: Environment::Ackley { grid_size: 25 },
        horizon: 40,
        n_runs: 3,
        base_seed: 17,
        kappa: KappaChoice::Fixed(8.0),
        ..ExperimentConfig::default()
    }
}

#[test]
fn summary_is_the_hand_average_of_traces() {
    for algorithm in [Algorithm::Mrlpf, Algorithm::MaxMinLcb] {
        let out = run_batch(&ackley_config(algorithm)).unwrap();
        assert_eq!(out.summary.n_runs, 3);
        assert_eq!(out.summary.mean.len(), 40);
        for t in 0..40 {
            let v: Vec<f64> = out.traces.iter().map(|tr| tr.steps[t].avg_regret).collect();
            let mean = (v[0] + v[1] + v[2]) / 3.0;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0;
            assert!((out.summary.mean[t] - mean).abs() < 1e-12);
            assert!((out.summary.std_err[t] - (var / 3.0).sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn batches_are_deterministic_and_independent_of_threading() {
    let mut serial = ackley_config(Algorithm::Mrlpf);
    serial.parallel = 1;
    let mut threaded = serial.clone();
    threaded.parallel = 3;
    let a = run_batch(&serial).unwrap();
    let b = run_batch(&threaded).unwrap();
    assert_eq!(a.traces, b.traces);
    assert_eq!(a.summary, b.summary);
    for run in 0..3 {
        assert_eq!(run_single(&serial, run).unwrap(), a.traces[run]);
    }

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_experiment(&serial, d1.path()).unwrap();
    run_experiment(&threaded, d2.path()).unwrap();
    for name in ["summary.csv", "trace_run0.csv", "trace_run2.csv"] {
        assert_eq!(
            fs::read(d1.path().join(name)).unwrap(),
            fs::read(d2.path().join(name)).unwrap()
        );
    }
    let summary = fs::read_to_string(d1.path().join("summary.csv")).unwrap();
    assert_eq!(
        summary.lines().next(),
        Some("t,mean_avg_regret,std_err,n_runs")
    );
    assert_eq!(summary.lines().count(), 41);
}

#[test]
fn round_one_regret_never_exceeds_half() {
    let config = ExperimentConfig {
        horizon: 100,
        n_runs: 4,
        ..ExperimentConfig::default()
    };
    for trace in run_batch(&config).unwrap().traces {
        let first = trace.rounds[0].pairs.len();
        assert_eq!(first, 10);
        assert!(trace.steps[..first]
            .iter()
            .all(|s| s.round == 1 && s.inst_regret <= 0.5));
    }
}

#[test]
fn invalid_fit_settings_abort_the_batch() {
    let config = ExperimentConfig {
        environment: Environment::Ackley { grid_size: 10 },
        horizon: 10,
        n_runs: 2,
        base_seed: 40,
        fit: FitConfig {
            learning_rate: f64::NAN,
            ..FitConfig::default()
        },
        ..ExperimentConfig::default()
    };
    assert!(run_batch(&config).is_err());
}
