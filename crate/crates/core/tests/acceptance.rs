//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use cablp_core::env::{Environment, Family, LinearParamMatrix, MeanRewardSpec};
use cablp_core::harness::fit_regret_exponent;
use cablp_core::linalg::{frobenius_inner, gaussian_matrix, operator_norm};
use cablp_core::orchestrator::{
    plan_parameters, r3_bound, run_cablp, FExponentMode, LambdaRule, PlanInputs, PracticalPlan,
    RunConfig, RunRecord, TheoryConstants,
};
use cablp_core::recovery::{solve_dantzig, DantzigProblem, SolverConfig};
use cablp_core::sampling::{sampling_sets_from_seed, SamplingPlan};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs collected from criteria 3-8 for the decomposition check.
#[derive(Default)]
struct Ledger {
    runs: Vec<(RunRecord, f64)>,
}

impl Ledger {
    fn push(&mut self, rec: &RunRecord, c2: f64) {
        let mut rec = rec.clone();
        rec.phase2 = None;
        self.runs.push((rec, c2));
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Criterion 1: an evaluator written straight from the parameter formulas.

struct Reference {
    q: f64,
    u: f64,
    f: f64,
    m_x: f64,
    m_phi: f64,
    eps_lo: f64,
    eps_hi: f64,
    n_resample: f64,
}

fn reference_plan(n: f64, d: f64, k: f64, sigma: f64, c2: f64, alpha: f64, c: &TheoryConstants) -> Reference {
    let delta = c.delta;
    let q = delta * delta / 144.0 - delta * delta * delta / 1296.0;
    let u = (36.0 * std::f64::consts::SQRT_2 / delta).ln();
    let expo = match c.f_mode {
        FExponentMode::Standard => 1.0,
        FExponentMode::Remark => 0.5,
    };
    let f = ((n.ln() / n).powf(expo / (k + 2.0))) / k.sqrt();
    let m_x = (2.0 * k * c2 * c2 * (k / c.p).ln() / (alpha * c.rho * c.rho)).ceil();
    let m_phi = (4.0 * k * (d + m_x + 1.0) * u * c.c1 / q).ceil();
    let m = d.max(m_x);
    let a1 = c2 * d * k * k;
    let b1 = ((1.0 - c.rho) * alpha).sqrt()
        / (c.c0.sqrt() * (1.0 + delta).sqrt() * (k.sqrt() + std::f64::consts::SQRT_2));
    // Smallest integer N above both the resampling threshold and four times
    // the level where f²b1² = 32γ(σ/√N)a1√(m_X m).
    let n_resample = if sigma == 0.0 {
        1.0
    } else {
        let t1 = c.c_prime * k.powi(6) * d * d * sigma * sigma * m_x * m / (f.powi(4) * alpha * alpha);
        let root = 32.0 * c.gamma * sigma * a1 * (m_x * m).sqrt() / (f * f * b1 * b1);
        t1.max(4.0 * root * root).floor() + 1.0
    };
    let s_eff = sigma / n_resample.sqrt();
    let disc = f * f * b1 * b1 - 32.0 * c.gamma * s_eff * a1 * (m_x * m).sqrt();
    let den = 2.0 * a1 * (m_x / m_phi).sqrt();
    Reference {
        q,
        u,
        f,
        m_x,
        m_phi,
        eps_lo: (f * b1 - disc.sqrt()) / den,
        eps_hi: (f * b1 + disc.sqrt()) / den,
        n_resample,
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..50 {
        let k = rng.random_range(1..=4usize);
        let d = rng.random_range(k..=80usize);
        let n = 10f64.powf(rng.random_range(3.0..12.0)).round();
        let sigma = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.001..1.0) };
        let c2 = rng.random_range(0.5..4.0);
        let alpha = rng.random_range(0.01..1.0);
        let constants = TheoryConstants {
            delta: rng.random_range(0.05..0.4),
            rho: rng.random_range(0.1..0.9),
            p: rng.random_range(0.01..0.5),
            c1: rng.random_range(1.01..3.0),
            gamma: rng.random_range(3.16..5.0),
            c0: rng.random_range(1.0..10.0),
            c_prime: rng.random_range(1.0..5.0),
            f_mode: if rng.random_bool(0.5) { FExponentMode::Standard } else { FExponentMode::Remark },
            ..TheoryConstants::default()
        };
        let inputs = PlanInputs { n: n as u64, d, k, sigma, c2, alpha, nu: 1e9 };
        let got = match plan_parameters(&inputs, &constants) {
            Ok(p) => p,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let want = reference_plan(n, d as f64, k as f64, sigma, c2, alpha, &constants);
        let pairs = [
            (got.q_delta, want.q),
            (got.u_delta, want.u),
            (got.f, want.f),
            (got.m_x as f64, want.m_x),
            (got.m_phi as f64, want.m_phi),
            (got.epsilon_hi, want.eps_hi),
            (got.n_resample, want.n_resample),
        ];
        for (g, w) in pairs {
            worst = worst.max((g - w).abs() / w.abs().max(f64::MIN_POSITIVE));
            if !rel_close(g, w, 1e-12) {
                failures += 1;
            }
        }
        // the lower end is a difference of near-equal terms when σ_eff is tiny
        let lo_scale = want.eps_hi.abs();
        if (got.epsilon_lo - want.eps_lo).abs() > 1e-12 * lo_scale {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("50 inputs, {failures} mismatches, worst relative deviation {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let plan = SamplingPlan { m_x: 30, m_phi: 200, epsilon: 0.1, n_resample: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(0xc2);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let sets = sampling_sets_from_seed(&plan, 20, i);
        let x = gaussian_matrix(20, 30, &mut rng);
        let v = DVector::from_iterator(200, (0..200).map(|_| rng.random_range(-1.0..1.0)));
        let lhs = sets.apply_operator(&x).unwrap().dot(&v);
        let rhs = frobenius_inner(&x, &sets.apply_adjoint(&v).unwrap());
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(worst <= 1e-10, format!("50 pairs at (20, 30, 200), max |<Phi(X),v> - <X,Phi*(v)>| = {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn random_env(family: Family, k: usize, d: usize, nu: f64, sigma: f64, seed: u64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = LinearParamMatrix::random(k, d, &mut rng).unwrap();
    Environment::new(a, MeanRewardSpec::new(family, k, nu).unwrap(), sigma, seed).unwrap()
}

fn criterion_3(ledger: &mut Ledger) -> Outcome {
    let plan = PracticalPlan {
        m_x: 20,
        m_phi: 300,
        n_resample: 1,
        epsilon: 0.05,
        lambda: LambdaRule::Relative { fraction: 1e-6 },
    };
    let mut errs = Vec::new();
    for seed in 0..10 {
        let mut env = random_env(Family::Linear { weights: vec![1.0] }, 1, 10, 0.1, 0.0, seed);
        let n = plan.sampling_plan().budget() + 2_000;
        let rec = run_cablp(&mut env, &RunConfig::practical(n, plan, 100 + seed)).unwrap();
        errs.push(rec.subspace_err);
        ledger.push(&rec, env.c2());
    }
    let good = errs.iter().filter(|&&e| e <= 1e-2).count();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(good >= 9, format!("{good}/10 seeds with subspace_error <= 1e-2 (max {worst:.2e})"))
}

// ---------------------------------------------------------------------------

fn criterion_4(ledger: &mut Ledger) -> Outcome {
    let plan = PracticalPlan {
        m_x: 10,
        m_phi: 150,
        n_resample: 1,
        epsilon: 0.05,
        lambda: LambdaRule::Relative { fraction: 1e-3 },
    };
    let mut means = Vec::new();
    for sigma in [0.0, 0.01, 0.05] {
        let mut total = 0.0;
        for seed in 0..10 {
            let family = Family::CenteredQuadratic { center: vec![0.5] };
            let mut env = random_env(family, 1, 10, 0.5, sigma, 200 + seed);
            let n = plan.sampling_plan().budget() + 1_000;
            let rec = run_cablp(&mut env, &RunConfig::practical(n, plan, 300 + seed)).unwrap();
            total += rec.subspace_err;
            ledger.push(&rec, env.c2());
        }
        means.push(total / 10.0);
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0] - 0.02);
    outcome(
        monotone,
        format!(
            "mean subspace_error at sigma_eff 0 / 0.01 / 0.05 = {:.4} / {:.4} / {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

// ---------------------------------------------------------------------------

/// Rotate the first row of `A` towards a unit vector orthogonal to the row
/// space so that `‖AᵀA − ÂᵀÂ‖_F = err`.
fn perturbed(a: &LinearParamMatrix, err: f64, rng: &mut ChaCha8Rng) -> LinearParamMatrix {
    let d = a.d();
    let p = a.projector();
    let mut w = DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-1.0..1.0)));
    w -= &p * &w;
    w /= w.norm();
    let theta = (err / std::f64::consts::SQRT_2).asin();
    let mut rows = a.matrix().clone();
    let first = rows.row(0).transpose() * theta.cos() + w * theta.sin();
    rows.set_row(0, &first.transpose());
    LinearParamMatrix::from_rows(&rows).unwrap()
}

fn criterion_5(ledger: &mut Ledger) -> Outcome {
    let mut held = 0;
    let mut worst_ratio = 0.0f64;
    let mut measured_err = 0.0f64;
    for i in 0..20u64 {
        let err = [0.05, 0.1, 0.2][(i % 3) as usize];
        let family = Family::CenteredQuadratic { center: vec![1.0, 0.0] };
        let mut env = random_env(family, 2, 10, 0.001, 0.0, 500 + i);
        let mut rng = ChaCha8Rng::seed_from_u64(600 + i);
        let a_hat = perturbed(env.a(), err, &mut rng);
        let got = cablp_core::recovery::subspace_error(env.a(), &a_hat).unwrap();
        measured_err = measured_err.max((got - err).abs());
        let mut cfg = RunConfig::practical(2_000, PracticalPlan {
            m_x: 1,
            m_phi: 1,
            n_resample: 1,
            epsilon: 0.001,
            lambda: LambdaRule::Theory,
        }, i);
        cfg.injected_a_hat = Some(a_hat);
        let rec = run_cablp(&mut env, &cfg).unwrap();
        let bound = r3_bound(rec.phase2_rounds, env.c2(), 2, env.nu(), got);
        if rec.r3 <= bound {
            held += 1;
        }
        worst_ratio = worst_ratio.max(rec.r3 / bound);
        ledger.push(&rec, env.c2());
    }
    outcome(
        held == 20 && measured_err < 1e-9,
        format!("R3 <= bound in {held}/20 runs (max R3/bound {worst_ratio:.3}); injected error off by {measured_err:.1e}"),
    )
}

// ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut scaled = Vec::new();
    let mut alpha_20 = 0.0;
    for d in [10, 20, 40] {
        let env = random_env(Family::NormSquared, 2, d, 0.1, 0.0, 700 + d as u64);
        let alpha = env.estimate_conditioning(50_000).unwrap().alpha_hat;
        if d == 20 {
            alpha_20 = alpha;
        }
        scaled.push(alpha * d as f64);
    }
    let hi = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let lo = scaled.iter().cloned().fold(f64::MAX, f64::min);
    let rel = (alpha_20 - 0.2).abs() / 0.2;
    outcome(
        hi / lo <= 1.3 && rel <= 0.15,
        format!(
            "alpha_hat*d = {:.3} / {:.3} / {:.3} (spread {:.3}); d=20 alpha_hat = {alpha_20:.4} ({:.1}% from 0.2)",
            scaled[0],
            scaled[1],
            scaled[2],
            hi / lo,
            100.0 * rel
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_7(ledger: &mut Ledger) -> Outcome {
    let mut points = Vec::new();
    for n2 in [10_000u64, 30_000, 100_000] {
        let mut total = 0.0;
        for seed in 0..10 {
            let family = Family::CenteredQuadratic { center: vec![0.5] };
            let mut env = random_env(family, 1, 10, 0.1, 0.05, 800 + seed);
            let mut cfg = RunConfig::practical(n2, PracticalPlan {
                m_x: 1,
                m_phi: 1,
                n_resample: 1,
                epsilon: 0.001,
                lambda: LambdaRule::Theory,
            }, seed);
            cfg.injected_a_hat = Some(env.a().clone());
            let rec = run_cablp(&mut env, &cfg).unwrap();
            total += rec.r2;
            ledger.push(&rec, env.c2());
        }
        points.push((n2 as f64, total / 10.0));
    }
    let fit = fit_regret_exponent(&points).unwrap();
    outcome(
        (0.55..=0.85).contains(&fit.slope),
        format!(
            "mean R2 = {:.1} / {:.1} / {:.1}; fitted exponent {:.3} (r^2 {:.3})",
            points[0].1, points[1].1, points[2].1, fit.slope, fit.r_squared
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_8(ledger: &mut Ledger) -> Outcome {
    let sigma = 0.1;
    let base = 5e4f64;
    let mut points = Vec::new();
    let mut decile_ok = true;
    let mut decile_detail = Vec::new();
    for n in [50_000u64, 100_000, 200_000] {
        let nf = n as f64;
        // Phase-1 resampling grows like n / log n
        let n_resample = (4.0 * (nf / nf.ln()) / (base / base.ln())).round() as u64;
        let plan = PracticalPlan {
            m_x: 10,
            m_phi: 150,
            n_resample,
            epsilon: 0.5,
            lambda: LambdaRule::Relative { fraction: 0.1 },
        };
        let (mut total, mut first, mut last) = (0.0, 0.0, 0.0);
        for seed in 0..10 {
            let family = Family::CenteredQuadratic { center: vec![0.6, 0.5] };
            let mut env = random_env(family, 2, 20, 0.5, sigma, 900 + seed);
            let mut cfg = RunConfig::practical(n, plan, 1_000 + seed);
            cfg.phase2.scale = Some(sigma);
            let rec = run_cablp(&mut env, &cfg).unwrap();
            total += rec.total_regret;
            let trace = rec.regret_trace();
            let p2 = &trace[rec.phase1_rounds as usize..];
            let head = &p2[..p2.len() / 10];
            let tail = &trace[trace.len() - trace.len() / 10..];
            first += head.iter().sum::<f64>() / head.len() as f64;
            last += tail.iter().sum::<f64>() / tail.len() as f64;
            ledger.push(&rec, env.c2());
        }
        decile_ok &= last < first;
        decile_detail.push(format!("{:.4}<{:.4}", last / 10.0, first / 10.0));
        points.push((nf, total / 10.0));
    }
    let fit = fit_regret_exponent(&points).unwrap();
    let pass = (0.6..=0.95).contains(&fit.slope) && fit.slope < 1.0 && decile_ok;
    outcome(
        pass,
        format!(
            "mean R = {:.0} / {:.0} / {:.0}; fitted exponent {:.3}; final vs first Phase-2 decile per-round regret {}",
            points[0].1,
            points[1].1,
            points[2].1,
            fit.slope,
            decile_detail.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_9(ledger: &Ledger) -> Outcome {
    let cfg = SolverConfig::default();
    let mut worst_err = 0.0f64;
    let mut infeasible = 0;
    let mut converged_solves = 0;
    for seed in 0..10u64 {
        let (d, m_x) = (10, 10);
        let plan = SamplingPlan { m_x, m_phi: 150, epsilon: 0.1, n_resample: 1 };
        let sets = sampling_sets_from_seed(&plan, d, 1_100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1_200 + seed);
        let u = gaussian_matrix(d, 1, &mut rng);
        let v = gaussian_matrix(m_x, 1, &mut rng);
        let x0: DMatrix<f64> = &u * v.transpose();
        let y = sets.apply_operator(&x0).unwrap();
        let lambda = 1e-6 * operator_norm(&sets.apply_adjoint(&y).unwrap());
        let problem = DantzigProblem { y, sets: &sets, lambda, k: 1 };
        let sol = solve_dantzig(&problem, &cfg).unwrap();
        worst_err = worst_err.max((&sol.m - &x0).norm() / x0.norm());
        if sol.converged {
            converged_solves += 1;
            if problem.residual_norm(&sol.m).unwrap() > lambda * (1.0 + 1e-6) {
                infeasible += 1;
            }
        }
    }
    for (rec, _) in &ledger.runs {
        if let (Some(r), Some(lambda)) = (&rec.recovery, rec.lambda) {
            if r.converged {
                converged_solves += 1;
                if r.residual_norm > lambda * (1.0 + 1e-6) {
                    infeasible += 1;
                }
            }
        }
    }
    outcome(
        infeasible == 0 && worst_err <= 1e-3,
        format!(
            "{infeasible} of {converged_solves} converged solves violate the constraint; planted max relative error {worst_err:.2e}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_10(ledger: &Ledger) -> Outcome {
    let mut violations = 0;
    let mut worst = 0.0f64;
    for (rec, c2) in &ledger.runs {
        let total: f64 = rec.regret_trace().iter().sum();
        let tol = rec.phase2_rounds as f64 * c2 * (rec.a_hat.as_ref().unwrap().k() as f64).sqrt() * 0.01;
        let gap = (rec.r1 + rec.r2 + rec.r3 - total).abs();
        worst = worst.max(gap);
        if gap > tol {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{} runs, {violations} outside tolerance, max |R1+R2+R3 - sum| = {worst:.2e}", ledger.runs.len()),
    )
}

fn main() {
    let mut ledger = Ledger::default();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} [{verdict}] {name}: {} ({:.1}s)",
            o.detail,
            t.elapsed().as_secs_f64()
        );
    };
    report(1, "formula fidelity", &mut criterion_1);
    report(2, "adjoint identity", &mut criterion_2);
    report(3, "noiseless exact recovery", &mut || criterion_3(&mut ledger));
    report(4, "noisy recovery degradation", &mut || criterion_4(&mut ledger));
    report(5, "R3 bound", &mut || criterion_5(&mut ledger));
    report(6, "conditioning scaling", &mut criterion_6);
    report(7, "phase-2 regret rate", &mut || criterion_7(&mut ledger));
    report(8, "end-to-end sublinearity", &mut || criterion_8(&mut ledger));
    report(9, "solver feasibility and planted recovery", &mut || criterion_9(&ledger));
    report(10, "decomposition identity", &mut || criterion_10(&ledger));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
