use cablp_core::env::{EnvDescriptor, Environment, Family, LinearParamMatrix, MatrixSpec, MeanRewardSpec};
use cablp_core::harness::{read_runs_csv, run_experiment, ExperimentConfig, SeedSpec};
use cablp_core::orchestrator::{
    decompose_regret, run_cablp, LambdaRule, PlanMode, PracticalPlan, RunConfig,
};
use cablp_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear_env(seed: u64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = LinearParamMatrix::random(1, 10, &mut rng).unwrap();
    let spec = MeanRewardSpec::new(Family::Linear { weights: vec![1.0] }, 1, 0.1).unwrap();
    Environment::new(a, spec, 0.0, seed).unwrap()
}

fn noiseless_plan() -> PracticalPlan {
    PracticalPlan {
        m_x: 20,
        m_phi: 300,
        n_resample: 1,
        epsilon: 0.05,
        lambda: LambdaRule::Relative { fraction: 1e-3 },
    }
}

#[test]
fn noiseless_linear_run_recovers_and_settles() {
    let mut env = linear_env(11);
    let rec = run_cablp(&mut env, &RunConfig::practical(20_000, noiseless_plan(), 5)).unwrap();
    assert!(rec.subspace_err <= 1e-2, "subspace error {}", rec.subspace_err);

    // r̄ ranges over [-(1+ν), 1+ν] for a unit linear link
    let range = 2.0 * env.radius();
    let trace = rec.regret_trace();
    let tail = &trace[trace.len() - trace.len() / 10..];
    let per_round = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(per_round <= 0.05 * range, "tail per-round regret {per_round}");
    assert_eq!(rec.phase1_rounds, 20 * 301);
    assert_eq!(env.query_count(), 20_000);
}

#[test]
fn decomposition_matches_trace() {
    let mut env = linear_env(12);
    let rec = run_cablp(&mut env, &RunConfig::practical(12_000, noiseless_plan(), 6)).unwrap();
    let total: f64 = rec.regret_trace().iter().sum();
    let dec = decompose_regret(&rec, &env, 0.01).unwrap();
    assert!((dec.r1 + dec.r2 + dec.r3 - total).abs() <= dec.tolerance.max(1e-8));
    assert!((rec.r1 + rec.r2 + rec.r3 - total).abs() <= 1e-8 * total.abs().max(1.0));
}

#[test]
fn used_environment_is_rejected() {
    let mut env = linear_env(13);
    env.sample_reward(&nalgebra::DVector::zeros(10)).unwrap();
    let err = run_cablp(&mut env, &RunConfig::practical(12_000, noiseless_plan(), 6)).unwrap_err();
    assert!(matches!(err.error, Error::InvalidParameter(_)));
}

#[test]
fn theory_mode_at_desk_horizon_is_budget_infeasible() {
    let mut env = linear_env(14);
    let cfg = RunConfig {
        mode: PlanMode::Theory { alpha: 0.1 },
        ..RunConfig::practical(100_000, noiseless_plan(), 1)
    };
    match run_cablp(&mut env, &cfg).unwrap_err().error {
        Error::BudgetInfeasible { minimal_n, .. } => assert!(minimal_n.unwrap() > 100_000.0),
        e => panic!("unexpected {e}"),
    }
    assert_eq!(env.query_count(), 0);
}

fn sweep_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        environment: EnvDescriptor {
            family: Family::CenteredQuadratic { center: vec![0.4] },
            k: 1,
            d: 6,
            sigma: 0.05,
            nu: 0.2,
            seed: 0,
            a: MatrixSpec::Keyword("random_orthonormal".into()),
        },
        mode: PlanMode::Practical(PracticalPlan {
            m_x: 6,
            m_phi: 60,
            n_resample: 1,
            epsilon: 0.1,
            lambda: LambdaRule::Relative { fraction: 0.05 },
        }),
        constants: Default::default(),
        solver: Default::default(),
        phase2: Default::default(),
        horizons: vec![1_000, 2_000, 4_000],
        seeds: SeedSpec::Derived { master: 9, count: 3 },
        output_dir: dir.to_path_buf(),
        oracle_resolution: 0.01,
        write_traces: true,
    }
}

#[test]
fn sweep_writes_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let summary = run_experiment(&sweep_config(&a)).unwrap();
    run_experiment(&sweep_config(&b)).unwrap();

    assert_eq!(summary.cells.len(), 9);
    assert_eq!(summary.aggregates.len(), 3);
    assert!(summary.fit.is_some());
    let csv_a = std::fs::read(a.join("runs.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("runs.csv")).unwrap());
    let header = String::from_utf8(csv_a).unwrap();
    assert!(header.starts_with("n,seed,status,R_total,R1,R2,R3,subspace_err,n1\n"));

    let back = read_runs_csv(&a.join("runs.csv")).unwrap();
    assert_eq!(back, summary.cells);
    assert_eq!(std::fs::read_dir(a.join("runs")).unwrap().count(), 18);
    assert!(a.join("summary.json").exists());
}

#[test]
fn infeasible_cells_do_not_abort_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = sweep_config(tmp.path());
    cfg.horizons = vec![200, 1_000];
    cfg.seeds = SeedSpec::List(vec![1, 2]);
    cfg.write_traces = false;
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.failed_cells, 2);
    assert!(summary.cells.iter().filter(|c| c.n == 200).all(|c| c.status == "budget_infeasible"));
    assert_eq!(summary.aggregates.len(), 1);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = sweep_config(std::path::Path::new("out"));
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    let back = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&cfg).unwrap());
    assert!(text.contains("\"mode\": \"practical\""));
}
