//! Criterion benchmarks for the hot paths: the Dantzig solve, the
//! measurement operator and the UCB loop.

use std::hint::black_box;

use cablp_core::env::{Environment, Family, LinearParamMatrix, MeanRewardSpec};
use cablp_core::phase2::{run_phase2, Phase2Config, Ucb1State};
use cablp_core::recovery::{solve_dantzig, DantzigProblem, SolverConfig};
use cablp_core::sampling::{sampling_sets_from_seed, SamplingPlan};
use criterion::{BenchmarkId, Criterion, Throughput};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn planted(d: usize, m_x: usize, m_phi: usize) -> (cablp_core::sampling::SamplingSets, DVector<f64>) {
    let plan = SamplingPlan { m_x, m_phi, epsilon: 0.1, n_resample: 1 };
    let sets = sampling_sets_from_seed(&plan, d, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = cablp_core::linalg::gaussian_matrix(d, 2, &mut rng);
    let v = cablp_core::linalg::gaussian_matrix(m_x, 2, &mut rng);
    let x0: DMatrix<f64> = u * v.transpose();
    let y = sets.apply_operator(&x0).unwrap();
    (sets, y)
}

pub fn operator(c: &mut Criterion) {
    let mut group = c.benchmark_group("operator");
    for &(d, m_x, m_phi) in &[(10, 10, 150), (20, 30, 300)] {
        let (sets, y) = planted(d, m_x, m_phi);
        let x = sets.apply_adjoint(&y).unwrap();
        group.throughput(Throughput::Elements((d * m_x * m_phi) as u64));
        let id = format!("{d}x{m_x}x{m_phi}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &x, |b, x| {
            b.iter(|| sets.apply_operator(black_box(x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("adjoint", &id), &y, |b, y| {
            b.iter(|| sets.apply_adjoint(black_box(y)).unwrap())
        });
    }
    group.finish();
}

pub fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("dantzig");
    group.sample_size(10);
    for &(d, m_x, m_phi) in &[(10, 10, 150), (20, 20, 300)] {
        let (sets, y) = planted(d, m_x, m_phi);
        let norm = cablp_core::linalg::operator_norm(&sets.apply_adjoint(&y).unwrap());
        for fraction in [1e-1, 1e-3] {
            let problem = DantzigProblem { y: y.clone(), sets: &sets, lambda: fraction * norm, k: 2 };
            let id = format!("{d}x{m_x}x{m_phi}/lambda={fraction:e}");
            group.bench_function(id, |b| {
                b.iter(|| solve_dantzig(black_box(&problem), &SolverConfig::default()).unwrap())
            });
        }
    }
    group.finish();
}

pub fn ucb(c: &mut Criterion) {
    let mut group = c.benchmark_group("ucb");
    for arms in [32usize, 512] {
        group.bench_with_input(BenchmarkId::new("select_update", arms), &arms, |b, &arms| {
            b.iter_batched(
                || Ucb1State::new(arms, 0.1),
                |mut state| {
                    for t in 0..4 * arms {
                        let a = state.select();
                        state.update(a, ((t * 7919) % 13) as f64 * 0.01);
                    }
                    state
                },
                criterion::BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

pub fn phase2(c: &mut Criterion) {
    let mut group = c.benchmark_group("phase2");
    group.sample_size(10);
    for n2 in [10_000u64, 50_000] {
        group.throughput(Throughput::Elements(n2));
        group.bench_with_input(BenchmarkId::from_parameter(n2), &n2, |b, &n2| {
            b.iter_batched(
                || {
                    let mut rng = ChaCha8Rng::seed_from_u64(3);
                    let a = LinearParamMatrix::random(2, 20, &mut rng).unwrap();
                    let spec = MeanRewardSpec::new(Family::CenteredQuadratic { center: vec![0.5, 0.2] }, 2, 0.3).unwrap();
                    Environment::new(a, spec, 0.1, 4).unwrap()
                },
                |mut env| {
                    let a_hat = env.a().clone();
                    let cfg = Phase2Config { scale: 0.1, ..Phase2Config::for_env(&env) };
                    run_phase2(&mut env, &a_hat, n2, &cfg).unwrap()
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}
