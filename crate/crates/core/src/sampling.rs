//! Phase-1 sampling: random base points on the sphere, Bernoulli directions,
//! resampled reward queries, and the linear measurement operator
//! `Φ(X)_i = ⟨Φ_i, X⟩ = Tr(Φ_iᵀ X)` with `Φ_i = [φ_{i,1} … φ_{i,m_X}]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, sample_unit_sphere};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub m_x: usize,
    pub m_phi: usize,
    pub epsilon: f64,
    /// Resampling factor `N`: every sampling point is queried this many times.
    pub n_resample: u64,
}

impl SamplingPlan {
    /// Checks the counts and that `x_j + εφ` stays inside `B_d(1+ν)`,
    /// i.e. `ε·√(d/m_Φ) ≤ ν`.
    pub fn validate(&self, d: usize, nu: f64) -> Result<()> {
        if self.m_x == 0 || self.m_phi == 0 || self.n_resample == 0 {
            return Err(Error::InvalidParameter(format!(
                "m_x, m_phi and N must be >= 1 (got {}, {}, {})",
                self.m_x, self.m_phi, self.n_resample
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        let reach = self.epsilon * (d as f64 / self.m_phi as f64).sqrt();
        if reach > nu * (1.0 + 1e-12) {
            return Err(Error::StepSizeInfeasible {
                lo: 0.0,
                cap: nu * (self.m_phi as f64 / d as f64).sqrt(),
            });
        }
        Ok(())
    }

    /// `n1 = N · m_X · (m_Φ + 1)`.
    pub fn budget(&self) -> u64 {
        self.n_resample * self.m_x as u64 * (self.m_phi as u64 + 1)
    }
}

/// The point set `X` and the direction set `Φ`.
///
/// Directions are stored as a `(d·m_X) × m_Φ` matrix whose column `i` is the
/// column-major vectorization of `Φ_i`, so `Φ` and `Φ*` are single
/// matrix-vector products.
#[derive(Clone, Debug)]
pub struct SamplingSets {
    d: usize,
    m_x: usize,
    m_phi: usize,
    points: DMatrix<f64>,
    phi_cols: DMatrix<f64>,
}

impl SamplingSets {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m_x(&self) -> usize {
        self.m_x
    }

    pub fn m_phi(&self) -> usize {
        self.m_phi
    }

    /// Base point `x_j` (unit norm).
    pub fn point(&self, j: usize) -> DVector<f64> {
        self.points.column(j).into_owned()
    }

    /// Direction `φ_{i,j}`, entries `±1/√m_Φ`.
    pub fn direction(&self, i: usize, j: usize) -> DVector<f64> {
        self.phi_cols
            .view((j * self.d, i), (self.d, 1))
            .column(0)
            .into_owned()
    }

    /// Measurement matrix `Φ_i` (`d × m_X`).
    pub fn measurement_matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d, self.m_x, self.phi_cols.column(i).as_slice())
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.shape() != (self.d, self.m_x) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {}", self.d, self.m_x),
                got: format!("{} x {}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// `Φ(X)`.
    pub fn apply_operator(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape(x)?;
        let v = DVector::from_column_slice(x.as_slice());
        Ok(self.phi_cols.tr_mul(&v))
    }

    /// `Φ*(v) = Σ_i v_i Φ_i`.
    pub fn apply_adjoint(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        if v.len() != self.m_phi {
            return Err(Error::ShapeMismatch {
                expected: format!("{}-vector", self.m_phi),
                got: format!("{}-vector", v.len()),
            });
        }
        let w = &self.phi_cols * v;
        Ok(DMatrix::from_column_slice(self.d, self.m_x, w.as_slice()))
    }

    /// Squared spectral norm of the operator, `‖Φ‖² = λ_max(Φ*Φ)`.
    pub fn operator_norm_sq(&self) -> f64 {
        let gram = self.phi_cols.tr_mul(&self.phi_cols);
        gram.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// All `m_X (m_Φ + 1)` distinct sampling points in query order: base
    /// points first, then `x_j + εφ_{i,j}` grouped by direction index `i`.
    pub fn query_points(&self, epsilon: f64) -> impl Iterator<Item = DVector<f64>> + '_ {
        let base = (0..self.m_x).map(|j| self.point(j));
        let shifted = (0..self.m_phi).flat_map(move |i| {
            (0..self.m_x).map(move |j| self.point(j) + self.direction(i, j) * epsilon)
        });
        base.chain(shifted)
    }
}

/// Draw `X` (uniform on `S^{d−1}`) and `Φ` (i.i.d. Rademacher entries
/// scaled by `1/√m_Φ`).
pub fn draw_sampling_sets<R: Rng + ?Sized>(plan: &SamplingPlan, d: usize, rng: &mut R) -> SamplingSets {
    let m_x = plan.m_x;
    let m_phi = plan.m_phi;
    let mut points = DMatrix::zeros(d, m_x);
    for j in 0..m_x {
        points.set_column(j, &sample_unit_sphere(d, rng));
    }
    let scale = 1.0 / (m_phi as f64).sqrt();
    let phi_cols = DMatrix::from_fn(d * m_x, m_phi, |_, _| {
        if rng.random_bool(0.5) {
            scale
        } else {
            -scale
        }
    });
    SamplingSets {
        d,
        m_x,
        m_phi,
        points,
        phi_cols,
    }
}

/// Sets drawn from a dedicated seed, so a serialized bundle can be replayed.
pub fn sampling_sets_from_seed(plan: &SamplingPlan, d: usize, seed: u64) -> SamplingSets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_sampling_sets(plan, d, &mut rng)
}

/// Averaged Phase-1 rewards and the assembled measurement vector
/// `y_i = (1/ε) Σ_j (r(x_j + εφ_{i,j}) − r(x_j))`.
#[derive(Clone, Debug, Serialize)]
pub struct MeasurementBundle {
    pub y: Vec<f64>,
    pub plan: SamplingPlan,
    pub d: usize,
    /// Seed the sampling sets were drawn from, when known.
    pub seed: Option<u64>,
    pub budget_used: u64,
    pub averaged_base: Vec<f64>,
    /// Row-major `m_Φ × m_X`: entry `(i, j)` is the average at `x_j + εφ_{i,j}`.
    pub averaged_shifted: Vec<f64>,
}

impl MeasurementBundle {
    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }
}

/// Query every distinct sampling point `N` times and assemble `y`.
///
/// Each base reward is measured once (N-averaged) and reused for all `m_Φ`
/// differences at that point. Domain violations are reported before any
/// query is spent.
pub fn collect_measurements(
    env: &mut Environment,
    sets: &SamplingSets,
    plan: &SamplingPlan,
) -> Result<MeasurementBundle> {
    if sets.d() != env.d() || sets.m_x() != plan.m_x || sets.m_phi() != plan.m_phi {
        return Err(Error::ShapeMismatch {
            expected: format!("sets for d = {}, m_x = {}, m_phi = {}", env.d(), plan.m_x, plan.m_phi),
            got: format!("d = {}, m_x = {}, m_phi = {}", sets.d(), sets.m_x(), sets.m_phi()),
        });
    }
    plan.validate(env.d(), env.nu())?;
    for x in sets.query_points(plan.epsilon) {
        env.check_domain(&x)?;
    }
    let budget = plan.budget();
    if env.remaining() < budget {
        return Err(Error::InsufficientBudget {
            requested: budget,
            remaining: env.remaining(),
        });
    }

    let n = plan.n_resample;
    let mut averages = Vec::with_capacity(plan.m_x * (plan.m_phi + 1));
    for x in sets.query_points(plan.epsilon) {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += env.sample_reward(&x)?;
        }
        averages.push(acc / n as f64);
    }
    let averaged_shifted = averages.split_off(plan.m_x);
    let averaged_base = averages;

    let y = (0..plan.m_phi)
        .map(|i| {
            let row = &averaged_shifted[i * plan.m_x..(i + 1) * plan.m_x];
            row.iter()
                .zip(&averaged_base)
                .map(|(s, b)| s - b)
                .sum::<f64>()
                / plan.epsilon
        })
        .collect();

    Ok(MeasurementBundle {
        y,
        plan: *plan,
        d: env.d(),
        seed: None,
        budget_used: budget,
        averaged_base,
        averaged_shifted,
    })
}

/// Extremes of `‖Φ(X)‖² / ‖X‖_F²` over random rank-k matrices (products of
/// Gaussian factors, Frobenius-normalized).
pub fn rip_ratio_sample<R: Rng + ?Sized>(
    sets: &SamplingSets,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if trials == 0 || k == 0 {
        return Err(Error::InvalidParameter("trials and k must be >= 1".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..trials {
        let left = gaussian_matrix(sets.d(), k, rng);
        let right = gaussian_matrix(k, sets.m_x(), rng);
        let mut x = left * right;
        let norm = x.norm();
        x /= norm;
        let ratio = sets.apply_operator(&x)?.norm_squared() / x.norm_squared();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}
