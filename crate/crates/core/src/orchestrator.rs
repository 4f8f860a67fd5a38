//! Parameter planning, end-to-end CAB-LP runs and regret decomposition.
//!
//! A run spends `n1 = N·m_X·(m_Φ+1)` rounds recovering the row space of `A`
//! and the remaining `n2 = n − n1` rounds on grid UCB-1. Regret is split as
//!
//! ```text
//! R1 = Σ_{t ≤ n1} (r̄(x*) − r̄(x_t))      exploration in phase 1
//! R2 = Σ_{t > n1} (r̄(x**) − r̄(x_t))     bandit regret on the estimated subspace
//! R3 = n2 · (r̄(x*) − r̄(x**))            offset of the estimated subspace
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{Environment, LinearParamMatrix};
use crate::error::{Error, Result};
use crate::linalg::{maximize_over_ball, operator_norm};
use crate::phase2::{run_phase2, EpochMode, Phase2Config, Phase2Outcome};
use crate::recovery::{
    compute_lambda, recover, subspace_error, truncation_error_bound, DantzigProblem, LambdaInputs,
    RecoveryResult, RecoverySummary, SolverConfig,
};
use crate::sampling::{collect_measurements, sampling_sets_from_seed, MeasurementBundle, SamplingPlan};

/// Exponent of `(log n / n)` in the accuracy target `f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FExponentMode {
    /// `f = k^{-1/2} (log n / n)^{1/(k+2)}`.
    #[default]
    Standard,
    /// `f = k^{-1/2} (log n / n)^{0.5/(k+2)}`, the better choice for `k = 1, 2`.
    Remark,
}

impl FExponentMode {
    fn numerator(self) -> f64 {
        match self {
            FExponentMode::Standard => 1.0,
            FExponentMode::Remark => 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonRule {
    #[default]
    Midpoint,
    /// Geometric mean of the endpoints; falls back to the midpoint when the
    /// lower end is zero.
    Geometric,
}

/// Free constants of the analysis. Only ranges are known for most of them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConstants {
    /// Isometry level, `0 < δ < √2 − 1`.
    pub delta: f64,
    pub rho: f64,
    /// Failure probability budget for the point set.
    pub p: f64,
    pub c1: f64,
    /// Must exceed `2√(log 12)`.
    pub gamma: f64,
    pub c0: f64,
    pub c_prime: f64,
    pub f_mode: FExponentMode,
    pub epsilon_rule: EpsilonRule,
}

impl Default for TheoryConstants {
    fn default() -> Self {
        Self {
            delta: 0.25,
            rho: 0.5,
            p: 0.1,
            c1: 1.1,
            gamma: 2.0 * 12f64.ln().sqrt() + 0.1,
            c0: 4.0,
            c_prime: 1.0,
            f_mode: FExponentMode::Standard,
            epsilon_rule: EpsilonRule::Midpoint,
        }
    }
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.delta > 0.0 && self.delta < 2f64.sqrt() - 1.0) {
            return bad("delta must lie in (0, sqrt(2) - 1)");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("p must lie in (0, 1)");
        }
        if !(self.c1 > 1.0) {
            return bad("c1 must exceed 1");
        }
        if !(self.gamma > 2.0 * 12f64.ln().sqrt()) {
            return bad("gamma must exceed 2 sqrt(log 12)");
        }
        if !(self.c0 > 0.0 && self.c_prime > 0.0) {
            return bad("C0 and C' must be positive");
        }
        Ok(())
    }
}

/// `q(δ) = (δ² − δ³/9) / 144`.
pub fn q_delta(delta: f64) -> f64 {
    (delta * delta - delta.powi(3) / 9.0) / 144.0
}

/// `u(δ) = log(36√2 / δ)`.
pub fn u_delta(delta: f64) -> f64 {
    (36.0 * 2f64.sqrt() / delta).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanInputs {
    pub n: u64,
    pub d: usize,
    pub k: usize,
    pub sigma: f64,
    pub c2: f64,
    pub alpha: f64,
    pub nu: f64,
}

/// Every derived quantity of the theory-mode plan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryParams {
    pub inputs: PlanInputs,
    pub constants: TheoryConstants,
    pub f: f64,
    pub m_x: usize,
    pub m_phi: usize,
    /// Resampling factor; may be astronomically large, hence a float.
    pub n_resample: f64,
    pub sigma_eff: f64,
    pub a1: f64,
    pub b1: f64,
    pub q_delta: f64,
    pub u_delta: f64,
    pub m: usize,
    /// `f² b1² − 32 γ σ_eff a1 √(m_X m)`; positive iff the ε-interval exists.
    pub discriminant: f64,
    pub epsilon_lo: f64,
    pub epsilon_hi: f64,
    pub epsilon_cap: f64,
    pub epsilon: f64,
    pub n1: f64,
    pub feasible: bool,
}

impl TheoryParams {
    pub fn ensure_feasible(&self) -> Result<()> {
        if self.feasible {
            Ok(())
        } else {
            Err(Error::BudgetInfeasible {
                n: self.inputs.n,
                n1: self.n1,
                minimal_n: minimal_feasible_n(&self.inputs, &self.constants),
            })
        }
    }

    /// The sampling plan, once the budget is known to be feasible.
    pub fn sampling_plan(&self) -> Result<SamplingPlan> {
        self.ensure_feasible()?;
        Ok(SamplingPlan {
            m_x: self.m_x,
            m_phi: self.m_phi,
            epsilon: self.epsilon,
            n_resample: self.n_resample as u64,
        })
    }
}

/// Midpoint (or geometric mean) of the open interval, capped at `cap`.
pub fn choose_epsilon(interval: (f64, f64), cap: f64, rule: EpsilonRule) -> Result<f64> {
    let (lo, hi) = interval;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "epsilon interval ({lo}, {hi}) is empty"
        )));
    }
    let inner = match rule {
        EpsilonRule::Geometric if lo > 0.0 => (lo * hi).sqrt(),
        _ => 0.5 * (lo + hi),
    };
    if cap <= lo {
        return Err(Error::StepSizeInfeasible { lo, cap });
    }
    Ok(inner.min(cap))
}

fn validate_inputs(inputs: &PlanInputs) -> Result<()> {
    if !(inputs.alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be > 0, got {}",
            inputs.alpha
        )));
    }
    if inputs.n < 2 || inputs.d == 0 || inputs.k == 0 || inputs.k > inputs.d {
        return Err(Error::InvalidParameter(
            "need n >= 2 and 1 <= k <= d".to_string(),
        ));
    }
    if !(inputs.c2 > 0.0 && inputs.sigma >= 0.0 && inputs.nu > 0.0) {
        return Err(Error::InvalidParameter(
            "need C2 > 0, sigma >= 0 and nu > 0".to_string(),
        ));
    }
    Ok(())
}

/// Evaluate the parameter choices of the regret analysis.
///
/// `N` is the smallest integer above both the resampling threshold
/// `C′k⁶d²σ²m_X m/(f⁴α²)` and four times the level at which the ε-interval
/// becomes well posed, which keeps the discriminant at least `f²b1²/2`.
/// An over-budget plan is returned with
/// `feasible = false` rather than repaired.
pub fn plan_parameters(inputs: &PlanInputs, constants: &TheoryConstants) -> Result<TheoryParams> {
    validate_inputs(inputs)?;
    constants.validate()?;
    let PlanInputs {
        n,
        d,
        k,
        sigma,
        c2,
        alpha,
        nu,
    } = *inputs;
    let c = constants;
    let (nf, df, kf) = (n as f64, d as f64, k as f64);

    let f = kf.sqrt().recip() * (nf.ln() / nf).powf(c.f_mode.numerator() / (kf + 2.0));
    let q = q_delta(c.delta);
    let u = u_delta(c.delta);
    let m_x = ((2.0 * kf * c2 * c2 * (kf / c.p).ln() / (alpha * c.rho * c.rho)).ceil() as usize).max(1);
    let m_phi = (4.0 * kf * (df + m_x as f64 + 1.0) * u * c.c1 / q).ceil() as usize;
    let m = d.max(m_x);
    let (m_xf, m_phif, mf) = (m_x as f64, m_phi as f64, m as f64);

    let a1 = c2 * df * kf * kf;
    let b1 = ((1.0 - c.rho) * alpha).sqrt()
        / (c.c0.sqrt() * (1.0 + c.delta).sqrt() * (kf.sqrt() + 2f64.sqrt()));

    let n_resample = if sigma == 0.0 {
        1.0
    } else {
        let prop = c.c_prime * kf.powi(6) * df * df * sigma * sigma * m_xf * mf
            / (f.powi(4) * alpha * alpha);
        let well_posed = (32.0 * c.gamma * sigma * a1 * (m_xf * mf).sqrt() / (f * f * b1 * b1)).powi(2);
        prop.max(4.0 * well_posed).floor() + 1.0
    };
    let sigma_eff = sigma / n_resample.sqrt();

    let discriminant = f * f * b1 * b1 - 32.0 * c.gamma * sigma_eff * a1 * (m_xf * mf).sqrt();
    if !(discriminant > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon interval is ill-posed (discriminant {discriminant:e})"
        )));
    }
    let denom = 2.0 * a1 * (m_xf / m_phif).sqrt();
    let root = discriminant.sqrt();
    let epsilon_lo = (f * b1 - root) / denom;
    let epsilon_hi = (f * b1 + root) / denom;
    let epsilon_cap = nu * (m_phif / df).sqrt();
    let epsilon = choose_epsilon((epsilon_lo.max(0.0), epsilon_hi), epsilon_cap, c.epsilon_rule)?;

    let n1 = n_resample * m_xf * (m_phif + 1.0);
    Ok(TheoryParams {
        inputs: *inputs,
        constants: *constants,
        f,
        m_x,
        m_phi,
        n_resample,
        sigma_eff,
        a1,
        b1,
        q_delta: q,
        u_delta: u,
        m,
        discriminant,
        epsilon_lo,
        epsilon_hi,
        epsilon_cap,
        epsilon,
        n1,
        feasible: n1 < nf,
    })
}

/// Smallest horizon `n` whose theory plan fits in the budget, if one exists
/// below `2^62`.
pub fn minimal_feasible_n(inputs: &PlanInputs, constants: &TheoryConstants) -> Option<f64> {
    let fits = |n: u64| {
        plan_parameters(&PlanInputs { n, ..*inputs }, constants)
            .map(|p| p.feasible)
            .unwrap_or(false)
    };
    let mut hi = 4u64;
    while !fits(hi) {
        if hi >= 1 << 62 {
            return None;
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    if fits(lo) {
        return Some(lo as f64);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi as f64)
}

/// `R3 ≤ n2 C2 √k (1+ν) ‖AᵀA − ÂᵀÂ‖_F / √2`.
pub fn r3_bound(n2: u64, c2: f64, k: usize, nu: f64, subspace_err: f64) -> f64 {
    n2 as f64 * c2 * (k as f64).sqrt() * (1.0 + nu) * subspace_err / 2f64.sqrt()
}

/// User-supplied Phase-1 plan for desk-scale experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PracticalPlan {
    pub m_x: usize,
    pub m_phi: usize,
    pub n_resample: u64,
    pub epsilon: f64,
    #[serde(default)]
    pub lambda: LambdaRule,
}

/// How the Dantzig constraint level is set in practical mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum LambdaRule {
    /// The high-probability bound used by the analysis. Safe but loose:
    /// with noise it usually forces the zero solution at desk scale.
    #[default]
    Theory,
    Fixed { value: f64 },
    /// `fraction · ‖Φ*(y)‖`. At `fraction ≥ 1` the zero matrix is feasible.
    Relative { fraction: f64 },
}

impl LambdaRule {
    /// `adjoint_norm` is `‖Φ*(y)‖` for the collected measurements.
    pub fn resolve(&self, inputs: &LambdaInputs, adjoint_norm: f64) -> Result<f64> {
        let lam = match *self {
            LambdaRule::Theory => compute_lambda(inputs),
            LambdaRule::Fixed { value } => value,
            LambdaRule::Relative { fraction } => fraction * adjoint_norm,
        };
        if lam > 0.0 && lam.is_finite() {
            Ok(lam)
        } else {
            Err(Error::InvalidParameter(format!("lambda must be > 0, got {lam}")))
        }
    }
}

impl PracticalPlan {
    pub fn sampling_plan(&self) -> SamplingPlan {
        SamplingPlan {
            m_x: self.m_x,
            m_phi: self.m_phi,
            epsilon: self.epsilon,
            n_resample: self.n_resample,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "plan", rename_all = "kebab-case")]
pub enum PlanMode {
    /// Every choice from the analysis; `alpha` is the declared conditioning level.
    Theory { alpha: f64 },
    Practical(PracticalPlan),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase2Settings {
    /// UCB exploration scale; `σ + 2·C2` when absent.
    pub scale: Option<f64>,
    pub epochs: EpochMode,
    pub m_override: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n: u64,
    pub mode: PlanMode,
    pub constants: TheoryConstants,
    pub solver: SolverConfig,
    pub phase2: Phase2Settings,
    pub oracle_resolution: f64,
    /// Seed of the algorithm's own randomness (sampling sets).
    pub seed: u64,
    /// Skip Phase 1 and play on this subspace instead.
    pub injected_a_hat: Option<LinearParamMatrix>,
}

impl RunConfig {
    pub fn practical(n: u64, plan: PracticalPlan, seed: u64) -> Self {
        Self {
            n,
            mode: PlanMode::Practical(plan),
            constants: TheoryConstants::default(),
            solver: SolverConfig::default(),
            phase2: Phase2Settings::default(),
            oracle_resolution: 0.01,
            seed,
            injected_a_hat: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub x_star_value: f64,
    pub x_star_star_value: f64,
    /// `n2 · C2 · √k · oracle_resolution`.
    pub tolerance: f64,
}

/// Outcome of one CAB-LP run. The per-round traces are kept in memory but
/// left out of the JSON form; see [`RunRecord::trace_csv`].
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    /// Seed of the algorithm's own draws.
    pub seed: u64,
    pub env_seed: u64,
    pub n: u64,
    pub theory_params: Option<TheoryParams>,
    pub plan: Option<SamplingPlan>,
    pub phase1_skipped: bool,
    pub lambda: Option<f64>,
    pub lambda_error_bound: Option<f64>,
    pub recovery: Option<RecoverySummary>,
    pub phase1_rounds: u64,
    pub phase2_rounds: u64,
    pub grid_m: usize,
    pub arms: usize,
    pub total_regret: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub decomposition_tolerance: f64,
    pub subspace_err: f64,
    pub r3_bound_value: f64,
    pub x_star_value: f64,
    pub x_star_star_value: f64,
    #[serde(skip)]
    pub a_hat: Option<LinearParamMatrix>,
    /// `r̄(x_t)` for every round.
    #[serde(skip)]
    pub mean_trace: Vec<f64>,
    #[serde(skip)]
    pub phase2: Option<Phase2Outcome>,
}

impl RunRecord {
    /// Per-round `r̄(x*) − r̄(x_t)`.
    pub fn regret_trace(&self) -> Vec<f64> {
        self.mean_trace
            .iter()
            .map(|m| self.x_star_value - m)
            .collect()
    }

    /// CSV with columns `round,phase,mean_reward,instantaneous_regret`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("round,phase,mean_reward,instantaneous_regret\n");
        for (t, m) in self.mean_trace.iter().enumerate() {
            let phase = if (t as u64) < self.phase1_rounds { 1 } else { 2 };
            out.push_str(&format!("{},{},{},{}\n", t + 1, phase, m, self.x_star_value - m));
        }
        out
    }

    /// CSV with columns `round,arm_id,y_1..y_k,reward,instantaneous_regret`;
    /// rounds are global (counting Phase 1).
    pub fn phase2_csv(&self) -> String {
        let Some(p2) = &self.phase2 else {
            return String::new();
        };
        let k = p2.grids.first().map_or(0, |g| g.k);
        let mut out = String::from("round,arm_id");
        for i in 1..=k {
            out.push_str(&format!(",y_{i}"));
        }
        out.push_str(",reward,instantaneous_regret\n");
        for (t, play) in p2.plays.iter().enumerate() {
            let y = &p2.grids[play.epoch as usize].lattice[play.arm as usize];
            out.push_str(&format!("{},{}", self.phase1_rounds + t as u64 + 1, play.arm));
            for v in y.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{}\n", play.reward, self.x_star_value - play.mean));
        }
        out
    }
}

/// Error from [`run_cablp`], with whatever was spent before it happened.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    /// Rounds consumed before the failure.
    pub rounds_used: u64,
    pub theory_params: Option<Box<TheoryParams>>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} rounds)", self.error, self.rounds_used)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Everything Phase 1 produces.
#[derive(Clone, Debug)]
pub struct Phase1Outcome {
    pub bundle: MeasurementBundle,
    pub lambda: f64,
    pub result: RecoveryResult,
    /// `r̄` of every Phase-1 query, in query order.
    pub mean_trace: Vec<f64>,
}

/// Draw the sampling sets from `seed`, spend `plan.budget()` queries and
/// recover the subspace.
pub fn run_phase1(
    env: &mut Environment,
    plan: &SamplingPlan,
    rule: LambdaRule,
    constants: &TheoryConstants,
    solver: &SolverConfig,
    seed: u64,
) -> Result<Phase1Outcome> {
    let d = env.d();
    let sets = sampling_sets_from_seed(plan, d, seed);
    let mut bundle = collect_measurements(env, &sets, plan)?;
    bundle.seed = Some(seed);
    let mut mean_trace = Vec::with_capacity(plan.budget() as usize);
    for x in sets.query_points(plan.epsilon) {
        let m = env.mean_reward(&x)?;
        mean_trace.extend(std::iter::repeat_n(m, plan.n_resample as usize));
    }

    let y = bundle.y_vector();
    let adjoint_norm = operator_norm(&sets.apply_adjoint(&y)?);
    let inputs = LambdaInputs {
        c2: env.c2(),
        epsilon: plan.epsilon,
        d,
        m_x: plan.m_x,
        m_phi: plan.m_phi,
        k: env.k(),
        sigma_eff: env.sigma() / (plan.n_resample as f64).sqrt(),
        delta: constants.delta,
        gamma: constants.gamma,
    };
    let lambda = rule.resolve(&inputs, adjoint_norm)?;
    let problem = DantzigProblem {
        y,
        sets: &sets,
        lambda,
        k: env.k(),
    };
    let result = recover(&problem, solver)?;
    Ok(Phase1Outcome {
        bundle,
        lambda,
        result,
        mean_trace,
    })
}

/// Best mean reward over `B_d(1+ν)`, from the closed form when available.
fn global_optimum(env: &Environment, resolution: f64) -> Result<f64> {
    match env.mean_spec().closed_form_opt() {
        Some((v, _)) => Ok(v),
        None => Ok(maximize_over_ball(
            |u| env.mean_spec().value(u),
            env.k(),
            env.radius(),
            resolution,
            true,
        )
        .0),
    }
}

/// `max_{y ∈ B_k(1+ν)} ḡ(AÂᵀy)` by lattice search plus local refinement.
fn subspace_optimum(env: &Environment, a_hat: &LinearParamMatrix, resolution: f64) -> f64 {
    let b: DMatrix<f64> = env.a().matrix() * a_hat.matrix().transpose();
    maximize_over_ball(
        |y: &DVector<f64>| env.mean_spec().value(&(&b * y)),
        a_hat.k(),
        env.radius(),
        resolution,
        true,
    )
    .0
}

/// Split the regret of a finished run into `(R1, R2, R3)`.
pub fn decompose_regret(
    record: &RunRecord,
    env: &Environment,
    oracle_resolution: f64,
) -> Result<Decomposition> {
    let a_hat = record
        .a_hat
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("run has no subspace estimate".into()))?;
    decompose_trace(
        &record.mean_trace,
        record.phase1_rounds as usize,
        a_hat,
        env,
        oracle_resolution,
    )
}

fn decompose_trace(
    mean_trace: &[f64],
    n1: usize,
    a_hat: &LinearParamMatrix,
    env: &Environment,
    oracle_resolution: f64,
) -> Result<Decomposition> {
    if !(oracle_resolution > 0.0) {
        return Err(Error::InvalidParameter("oracle resolution must be > 0".into()));
    }
    let star = global_optimum(env, oracle_resolution)?;
    let star_star = subspace_optimum(env, a_hat, oracle_resolution);
    let (phase1, phase2) = mean_trace.split_at(n1.min(mean_trace.len()));
    let n2 = phase2.len();
    let r1 = phase1.iter().map(|m| star - m).sum();
    let r2 = phase2.iter().map(|m| star_star - m).sum();
    let r3 = n2 as f64 * (star - star_star);
    Ok(Decomposition {
        r1,
        r2,
        r3,
        x_star_value: star,
        x_star_star_value: star_star,
        tolerance: n2 as f64 * env.c2() * (env.k() as f64).sqrt() * oracle_resolution,
    })
}

/// Run CAB-LP end to end on a fresh environment, consuming exactly `n` queries.
pub fn run_cablp(env: &mut Environment, cfg: &RunConfig) -> std::result::Result<RunRecord, RunFailure> {
    let fail = |error: Error, env: &Environment, tp: Option<&TheoryParams>| RunFailure {
        error,
        rounds_used: env.query_count(),
        theory_params: tp.cloned().map(Box::new),
    };
    if env.query_count() != 0 {
        return Err(fail(
            Error::InvalidParameter("environment has already been queried".into()),
            env,
            None,
        ));
    }
    let n = cfg.n;
    let (d, k) = (env.d(), env.k());
    env.set_budget(n);

    // planning happens before any query
    let mut theory_params = None;
    let plan = match (&cfg.injected_a_hat, cfg.mode) {
        (Some(_), _) => None,
        (None, PlanMode::Theory { alpha }) => {
            let inputs = PlanInputs {
                n,
                d,
                k,
                sigma: env.sigma(),
                c2: env.c2(),
                alpha,
                nu: env.nu(),
            };
            let tp = plan_parameters(&inputs, &cfg.constants).map_err(|e| fail(e, env, None))?;
            let plan = tp.sampling_plan().map_err(|e| fail(e, env, Some(&tp)))?;
            theory_params = Some(tp);
            Some((plan, LambdaRule::Theory))
        }
        (None, PlanMode::Practical(pp)) => {
            let plan = pp.sampling_plan();
            plan.validate(d, env.nu()).map_err(|e| fail(e, env, None))?;
            if plan.budget() >= n {
                return Err(fail(
                    Error::BudgetInfeasible {
                        n,
                        n1: plan.budget() as f64,
                        minimal_n: Some(plan.budget() as f64 + 1.0),
                    },
                    env,
                    None,
                ));
            }
            Some((plan, pp.lambda))
        }
    };

    let mut mean_trace: Vec<f64> = Vec::with_capacity(n as usize);
    let mut lambda = None;
    let mut recovery_summary = None;
    let a_hat = match (&cfg.injected_a_hat, plan) {
        (Some(a_hat), _) => {
            if a_hat.d() != d || a_hat.k() != k {
                return Err(fail(
                    Error::ShapeMismatch {
                        expected: format!("{k} x {d}"),
                        got: format!("{} x {}", a_hat.k(), a_hat.d()),
                    },
                    env,
                    None,
                ));
            }
            a_hat.clone()
        }
        (None, Some((plan, rule))) => {
            let tp = theory_params.as_ref();
            let p1 = run_phase1(env, &plan, rule, &cfg.constants, &cfg.solver, cfg.seed)
                .map_err(|e| fail(e, env, tp))?;
            mean_trace = p1.mean_trace;
            lambda = Some(p1.lambda);
            recovery_summary = Some(p1.result.summary(Some(env.a())));
            p1.result.a_hat
        }
        (None, None) => unreachable!("a plan exists whenever phase 1 runs"),
    };

    let n1 = env.query_count();
    let n2 = n - n1;
    let p2cfg = Phase2Config {
        scale: cfg
            .phase2
            .scale
            .unwrap_or_else(|| Phase2Config::for_env(env).scale),
        epochs: cfg.phase2.epochs,
        m_override: cfg.phase2.m_override,
    };
    let tp = theory_params.as_ref();
    let outcome = run_phase2(env, &a_hat, n2, &p2cfg).map_err(|e| fail(e, env, tp))?;
    mean_trace.extend(outcome.plays.iter().map(|p| p.mean));
    debug_assert_eq!(env.query_count(), n);

    let dec = decompose_trace(&mean_trace, n1 as usize, &a_hat, env, cfg.oracle_resolution)
        .map_err(|e| fail(e, env, tp))?;
    let subspace_err = subspace_error(env.a(), &a_hat).map_err(|e| fail(e, env, tp))?;
    let total_regret = mean_trace.iter().map(|m| dec.x_star_value - m).sum();

    Ok(RunRecord {
        seed: cfg.seed,
        env_seed: env.seed(),
        n,
        lambda_error_bound: lambda.map(|l| truncation_error_bound(l, cfg.constants.c0, k)),
        theory_params,
        plan: plan.map(|(p, _)| p),
        phase1_skipped: cfg.injected_a_hat.is_some(),
        lambda,
        recovery: recovery_summary,
        phase1_rounds: n1,
        phase2_rounds: n2,
        grid_m: outcome.grid().m,
        arms: outcome.grid().len(),
        total_regret,
        r1: dec.r1,
        r2: dec.r2,
        r3: dec.r3,
        decomposition_tolerance: dec.tolerance,
        subspace_err,
        r3_bound_value: r3_bound(n2, env.c2(), k, env.nu(), subspace_err),
        x_star_value: dec.x_star_value,
        x_star_star_value: dec.x_star_star_value,
        a_hat: Some(a_hat),
        mean_trace,
        phase2: Some(outcome),
    })
}
