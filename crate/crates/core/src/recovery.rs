//! Low-rank recovery: the matrix Dantzig selector
//!
//! ```text
//! X̂ = argmin ‖M‖_*  s.t.  ‖Φ*(y − Φ(M))‖ ≤ λ
//! ```
//!
//! followed by rank-k truncation and extraction of the estimated row space.
//!
//! The selector is solved matrix-free through a continuation sequence of
//! nuclear-norm regularized least-squares problems
//! `min ½‖y − Φ(M)‖² + μ‖M‖_*`, each by accelerated proximal gradient with
//! singular-value soft-thresholding. At the optimum of such a problem
//! `‖Φ*(y − Φ(M))‖ ≤ μ`, so driving `μ` down from `‖Φ*(y)‖` reaches a
//! feasible point; a short bisection then pushes `μ` back up towards the
//! feasibility boundary, where the nuclear norm is smallest.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::LinearParamMatrix;
use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, operator_norm, sorted_svd};
use crate::sampling::SamplingSets;

/// Smallest admissible `σ_k` before the recovered subspace is declared degenerate.
pub const RANK_COLLAPSE_TOL: f64 = 1e-12;

/// Inputs of the constraint level `λ`, a high-probability bound on
/// `‖Φ*(H)‖ + ‖Φ*(N)‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaInputs {
    pub c2: f64,
    pub epsilon: f64,
    pub d: usize,
    pub m_x: usize,
    pub m_phi: usize,
    pub k: usize,
    /// Noise level after resampling, `σ/√N`.
    pub sigma_eff: f64,
    pub delta: f64,
    pub gamma: f64,
}

/// `λ = (1+δ)^{1/2} (C2 ε d m_X k² / (2√m_Φ) + 4γ σ_eff √(m_X m_Φ m) / ε)`
/// with `m = max(d, m_X)`.
pub fn compute_lambda(p: &LambdaInputs) -> f64 {
    let m = p.d.max(p.m_x) as f64;
    let (d, m_x, m_phi, k) = (p.d as f64, p.m_x as f64, p.m_phi as f64, p.k as f64);
    let taylor = p.c2 * p.epsilon * d * m_x * k * k / (2.0 * m_phi.sqrt());
    let stochastic = 4.0 * p.gamma * p.sigma_eff * (m_x * m_phi * m).sqrt() / p.epsilon;
    (1.0 + p.delta).sqrt() * (taylor + stochastic)
}

/// Error bound on the rank-k truncation, `‖X̂^{(k)} − X‖_F ≤ 2 √(C0 k) λ`.
/// Expanded, this is exactly the stated recovery bound with its `8γσ` term.
pub fn truncation_error_bound(lambda: f64, c0: f64, k: usize) -> f64 {
    2.0 * (c0 * k as f64).sqrt() * lambda
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Proximal-gradient iterations per subproblem.
    pub max_iters: usize,
    /// Relative iterate change that ends a subproblem.
    pub rel_tol: f64,
    /// Constraint slack relative to `λ`.
    pub feas_tol: f64,
    /// Multiplicative decrease of `μ` between continuation stages.
    pub continuation: f64,
    /// The last stage uses `μ = λ (1 − margin)`.
    pub floor_margin: f64,
    pub bisection_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            rel_tol: 1e-7,
            feas_tol: 1e-6,
            continuation: 0.5,
            floor_margin: 0.02,
            bisection_steps: 4,
        }
    }
}

pub struct DantzigProblem<'a> {
    pub y: DVector<f64>,
    pub sets: &'a SamplingSets,
    pub lambda: f64,
    pub k: usize,
}

impl DantzigProblem<'_> {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if self.y.len() != self.sets.m_phi() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}-vector", self.sets.m_phi()),
                got: format!("{}-vector", self.y.len()),
            });
        }
        if self.k == 0 || self.k > self.sets.d().min(self.sets.m_x()) {
            return Err(Error::InvalidParameter(format!("invalid target rank {}", self.k)));
        }
        Ok(())
    }

    /// `‖Φ*(y − Φ(M))‖`.
    pub fn residual_norm(&self, m: &DMatrix<f64>) -> Result<f64> {
        let r = &self.y - self.sets.apply_operator(m)?;
        Ok(operator_norm(&self.sets.apply_adjoint(&r)?))
    }
}

#[derive(Clone, Debug)]
pub struct DantzigSolution {
    pub m: DMatrix<f64>,
    pub residual_norm: f64,
    /// Total proximal-gradient iterations across all stages.
    pub iterations: usize,
    pub converged: bool,
    /// Regularization weight of the returned iterate.
    pub mu: f64,
}

/// Singular-value soft-thresholding `Σ_i max(σ_i − τ, 0) u_i v_iᵀ`.
pub fn soft_threshold_singular_values(z: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let svd = z.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - tau;
        if shrunk > 0.0 {
            out.ger(shrunk, &u.column(i), &v_t.row(i).transpose(), 1.0);
        }
    }
    out
}

struct Stage {
    m: DMatrix<f64>,
    iterations: usize,
    converged: bool,
}

/// Accelerated proximal gradient (FISTA with gradient restart) on
/// `½‖y − Φ(M)‖² + μ‖M‖_*`.
fn nuclear_lasso(
    problem: &DantzigProblem<'_>,
    mu: f64,
    step: f64,
    warm: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<Stage> {
    let sets = problem.sets;
    let mut prev = warm.clone();
    let mut look = warm.clone();
    let mut t = 1.0f64;
    for it in 1..=cfg.max_iters {
        let resid = sets.apply_operator(&look)? - &problem.y;
        let grad = sets.apply_adjoint(&resid)?;
        let next = soft_threshold_singular_values(&(&look - grad * step), mu * step);

        let diff = &next - &prev;
        let change = diff.norm();
        let scale = prev.norm().max(next.norm());
        if change <= cfg.rel_tol * scale || scale == 0.0 {
            return Ok(Stage {
                m: next,
                iterations: it,
                converged: true,
            });
        }

        // restart momentum when it points uphill
        if crate::linalg::frobenius_inner(&(&look - &next), &diff) > 0.0 {
            t = 1.0;
            look = next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            look = &next + diff * ((t - 1.0) / t_next);
            t = t_next;
        }
        prev = next;
    }
    Ok(Stage {
        m: prev,
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// Approximate solution of the matrix Dantzig selector.
///
/// Non-convergence is not an error: the best iterate comes back with
/// `converged = false`.
pub fn solve_dantzig(problem: &DantzigProblem<'_>, cfg: &SolverConfig) -> Result<DantzigSolution> {
    problem.validate()?;
    let sets = problem.sets;
    let lambda = problem.lambda;
    let feasible = |res: f64| res <= lambda * (1.0 + cfg.feas_tol);

    let zero = DMatrix::zeros(sets.d(), sets.m_x());
    let start = operator_norm(&sets.apply_adjoint(&problem.y)?);
    if feasible(start) {
        return Ok(DantzigSolution {
            m: zero,
            residual_norm: start,
            iterations: 0,
            converged: true,
            mu: start,
        });
    }

    let lipschitz = sets.operator_norm_sq();
    let step = 1.0 / lipschitz;
    let floor = lambda * (1.0 - cfg.floor_margin);
    let mut iterations = 0;

    let mut mu = start;
    let mut current = zero;
    let mut infeasible_mu = start;
    let (mut best, mut best_mu, mut best_res, mut best_conv) = loop {
        mu = (mu * cfg.continuation).max(floor);
        let stage = nuclear_lasso(problem, mu, step, &current, cfg)?;
        iterations += stage.iterations;
        let res = problem.residual_norm(&stage.m)?;
        current = stage.m;
        if feasible(res) {
            break (current.clone(), mu, res, stage.converged);
        }
        if mu <= floor {
            return Ok(DantzigSolution {
                m: current,
                residual_norm: res,
                iterations,
                converged: false,
                mu,
            });
        }
        infeasible_mu = mu;
    };

    // push μ back toward the feasibility boundary
    let mut lo = best_mu;
    let mut hi = infeasible_mu;
    for _ in 0..cfg.bisection_steps {
        if hi <= lo * (1.0 + 1e-3) {
            break;
        }
        let mid = (lo * hi).sqrt();
        let stage = nuclear_lasso(problem, mid, step, &best, cfg)?;
        iterations += stage.iterations;
        let res = problem.residual_norm(&stage.m)?;
        if feasible(res) && stage.converged {
            lo = mid;
            best = stage.m;
            best_mu = mid;
            best_res = res;
            best_conv = true;
        } else {
            hi = mid;
        }
    }

    Ok(DantzigSolution {
        m: best,
        residual_norm: best_res,
        iterations,
        converged: best_conv,
        mu: best_mu,
    })
}

/// Best rank-k approximation (top-k SVD truncation).
pub fn truncate_rank_k(x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let max_rank = x.nrows().min(x.ncols());
    if k > max_rank {
        return Err(Error::InvalidParameter(format!(
            "rank {k} exceeds min dimension {max_rank}"
        )));
    }
    let svd = sorted_svd(x);
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..k {
        out.ger(
            svd.singular_values[i],
            &svd.u.column(i),
            &svd.v_t.row(i).transpose(),
            1.0,
        );
    }
    Ok(out)
}

/// `Âᵀ` = top-k left singular vectors of `x_k`.
pub fn extract_subspace(x_k: &DMatrix<f64>, k: usize) -> Result<LinearParamMatrix> {
    let svd = sorted_svd(x_k);
    let sigma_k = svd.singular_values.get(k.wrapping_sub(1)).copied().unwrap_or(0.0);
    if k == 0 || !(sigma_k > RANK_COLLAPSE_TOL) {
        return Err(Error::DegenerateRecovery {
            sigma_k,
            singular_values: svd.singular_values,
        });
    }
    let rows = svd.u.columns(0, k).transpose();
    LinearParamMatrix::from_rows(&rows)
}

/// `‖AᵀA − ÂᵀÂ‖_F`.
pub fn subspace_error(a: &LinearParamMatrix, a_hat: &LinearParamMatrix) -> Result<f64> {
    if a.matrix().shape() != a_hat.matrix().shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {}", a.k(), a.d()),
            got: format!("{} x {}", a_hat.k(), a_hat.d()),
        });
    }
    Ok((a.projector() - a_hat.projector()).norm())
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    pub x_hat: DMatrix<f64>,
    pub x_hat_k: DMatrix<f64>,
    pub a_hat: LinearParamMatrix,
    pub singular_values: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
}

/// Serializable digest of a [`RecoveryResult`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoverySummary {
    pub singular_values: Vec<f64>,
    pub residual_norm: f64,
    pub subspace_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
    pub nuclear_norm: f64,
}

impl RecoveryResult {
    pub fn summary(&self, truth: Option<&LinearParamMatrix>) -> RecoverySummary {
        RecoverySummary {
            singular_values: self.singular_values.clone(),
            residual_norm: self.residual_norm,
            subspace_error: truth.and_then(|a| subspace_error(a, &self.a_hat).ok()),
            iterations: self.iterations,
            converged: self.converged,
            lambda: self.lambda,
            nuclear_norm: nuclear_norm(&self.x_hat),
        }
    }
}

/// Dantzig solve, rank-k truncation and subspace extraction in one go.
pub fn recover(problem: &DantzigProblem<'_>, cfg: &SolverConfig) -> Result<RecoveryResult> {
    let sol = solve_dantzig(problem, cfg)?;
    let x_hat_k = truncate_rank_k(&sol.m, problem.k)?;
    let a_hat = extract_subspace(&x_hat_k, problem.k)?;
    Ok(RecoveryResult {
        singular_values: sorted_svd(&sol.m).singular_values,
        x_hat: sol.m,
        x_hat_k,
        a_hat,
        residual_norm: sol.residual_norm,
        iterations: sol.iterations,
        converged: sol.converged,
        lambda: problem.lambda,
    })
}
