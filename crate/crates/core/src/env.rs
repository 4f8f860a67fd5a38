//! Synthetic reward environments `r_t(x) = ḡ(Ax) + η_t`.
//!
//! An [`Environment`] owns the hidden linear parameter matrix `A`, the mean
//! reward link `ḡ`, the Gaussian noise level and a seeded generator. Every call
//! to [`Environment::sample_reward`] is charged against the query budget;
//! noiseless evaluations ([`Environment::mean_reward`]) are free and exist for
//! regret accounting only.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, maximize_over_ball, sample_unit_sphere, sorted_svd};

/// Relative slack allowed on the domain radius before a query is rejected.
const DOMAIN_SLACK: f64 = 1e-12;

// Stream ids carved out of the environment seed.
const NOISE_STREAM: u64 = 0;
const MATRIX_STREAM: u64 = 1;
const CONDITIONING_STREAM: u64 = 2;

/// Row-orthonormal `k × d` matrix `A` (`A Aᵀ = I_k`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParamMatrix(DMatrix<f64>);

impl LinearParamMatrix {
    /// Orthonormalize the rows of `m` while keeping its row space.
    ///
    /// This is Gram–Schmidt on the rows (QR of `mᵀ` with a positive `R`
    /// diagonal), so a matrix whose rows are already orthonormal comes back
    /// unchanged.
    pub fn from_rows(m: &DMatrix<f64>) -> Result<Self> {
        let (k, d) = m.shape();
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= k <= d, got k = {k}, d = {d}"
            )));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite matrix entry".into()));
        }
        let s = sorted_svd(m).singular_values;
        let tol = s[0] * 1e-10 * d as f64;
        let rank = s.iter().filter(|&&v| v > tol).count();
        if s[0] == 0.0 || rank < k {
            return Err(Error::RankDeficient { rank, k });
        }

        let qr = m.transpose().qr();
        let mut q = qr.q();
        let r = qr.r();
        for i in 0..k {
            if r[(i, i)] < 0.0 {
                q.column_mut(i).neg_mut();
            }
        }
        Ok(Self(q.transpose()))
    }

    /// A uniformly random row-orthonormal matrix (orthonormalized Gaussian).
    pub fn random<R: rand::Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Self> {
        loop {
            match Self::from_rows(&gaussian_matrix(k, d, rng)) {
                Err(Error::RankDeficient { .. }) => continue,
                other => return other,
            }
        }
    }

    pub fn k(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Orthogonal projector `AᵀA` onto the row space.
    pub fn projector(&self) -> DMatrix<f64> {
        self.0.transpose() * &self.0
    }

    /// Embed a k-vector `y` as the strategy `Aᵀy`.
    pub fn embed(&self, y: &DVector<f64>) -> DVector<f64> {
        self.0.tr_mul(y)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.0
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

impl Serialize for LinearParamMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

/// Shipped mean-reward link functions `ḡ : B_k(1+ν) → ℝ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum Family {
    /// `ḡ(u) = ⟨w, u⟩`.
    Linear { weights: Vec<f64> },
    /// `ḡ(u) = ‖u‖²`; `∇ḡ(0) = 0` with full-rank Hessian, so `α = Θ(1/d)`.
    NormSquared,
    /// `ḡ(u) = 1 − ‖u − c‖²`.
    CenteredQuadratic { center: Vec<f64> },
    /// `ḡ(u) = exp(−‖u − c‖² / 2s²)`.
    GaussianBump { center: Vec<f64>, width: f64 },
}

/// A mean-reward link together with its intrinsic dimension and domain slack.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanRewardSpec {
    pub family: Family,
    pub k: usize,
    pub nu: f64,
}

impl MeanRewardSpec {
    pub fn new(family: Family, k: usize, nu: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be >= 0, got {nu}")));
        }
        let check_len = |name: &str, v: &[f64]| {
            if v.len() != k {
                Err(Error::InvalidParameter(format!(
                    "{name} has length {}, expected k = {k}",
                    v.len()
                )))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(Error::InvalidParameter(format!("{name} has non-finite entries")))
            } else {
                Ok(())
            }
        };
        match &family {
            Family::Linear { weights } => {
                check_len("weights", weights)?;
                if weights.iter().all(|&w| w == 0.0) {
                    return Err(Error::InvalidParameter("linear weights are all zero".into()));
                }
            }
            Family::NormSquared => {}
            Family::CenteredQuadratic { center } => check_len("center", center)?,
            Family::GaussianBump { center, width } => {
                check_len("center", center)?;
                if !(*width > 0.0) {
                    return Err(Error::InvalidParameter(format!("width must be > 0, got {width}")));
                }
            }
        }
        Ok(Self { family, k, nu })
    }

    pub fn radius(&self) -> f64 {
        1.0 + self.nu
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        match &self.family {
            Family::Linear { weights } => weights.iter().zip(u.iter()).map(|(w, x)| w * x).sum(),
            Family::NormSquared => u.norm_squared(),
            Family::CenteredQuadratic { center } => 1.0 - dist_sq(u, center),
            Family::GaussianBump { center, width } => {
                (-dist_sq(u, center) / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.family {
            Family::Linear { weights } => DVector::from_column_slice(weights),
            Family::NormSquared => u * 2.0,
            Family::CenteredQuadratic { center } => {
                DVector::from_fn(self.k, |i, _| -2.0 * (u[i] - center[i]))
            }
            Family::GaussianBump { center, width } => {
                let g = self.value(u);
                let s2 = width * width;
                DVector::from_fn(self.k, |i, _| -(u[i] - center[i]) / s2 * g)
            }
        }
    }

    pub fn hessian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let k = self.k;
        match &self.family {
            Family::Linear { .. } => DMatrix::zeros(k, k),
            Family::NormSquared => DMatrix::identity(k, k) * 2.0,
            Family::CenteredQuadratic { .. } => DMatrix::identity(k, k) * -2.0,
            Family::GaussianBump { center, width } => {
                let g = self.value(u);
                let s2 = width * width;
                DMatrix::from_fn(k, k, |i, j| {
                    let di = u[i] - center[i];
                    let dj = u[j] - center[j];
                    let delta = if i == j { 1.0 / s2 } else { 0.0 };
                    (di * dj / (s2 * s2) - delta) * g
                })
            }
        }
    }

    /// Analytic bound on `|ḡ|` and all partial derivatives up to order two
    /// over `B_k(1+ν)`.
    pub fn c2(&self) -> f64 {
        let r = self.radius();
        match &self.family {
            Family::Linear { weights } => {
                let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
                let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
                (r * norm).max(max_abs)
            }
            Family::NormSquared => (r * r).max(2.0 * r).max(2.0),
            Family::CenteredQuadratic { center } => {
                let cn = center.iter().map(|c| c * c).sum::<f64>().sqrt();
                let cmax = center.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                let far = (r + cn) * (r + cn) - 1.0;
                1.0f64.max(far).max(2.0 * (r + cmax)).max(2.0)
            }
            Family::GaussianBump { width, .. } => {
                let s = *width;
                1.0f64
                    .max(1.0 / (s * std::f64::consts::E.sqrt()))
                    .max(1.0 / (s * s))
            }
        }
    }

    /// Closed-form maximizer over `B_k(1+ν)` and the maximal value.
    pub fn closed_form_opt(&self) -> Option<(f64, DVector<f64>)> {
        let r = self.radius();
        let k = self.k;
        let toward = |c: &[f64]| -> (f64, DVector<f64>) {
            let c = DVector::from_column_slice(c);
            let n = c.norm();
            if n <= r {
                (0.0, c)
            } else {
                (n - r, c * (r / n))
            }
        };
        match &self.family {
            Family::Linear { weights } => {
                let w = DVector::from_column_slice(weights);
                let n = w.norm();
                Some((r * n, w * (r / n)))
            }
            Family::NormSquared => {
                let mut u = DVector::zeros(k);
                u[0] = r;
                Some((r * r, u))
            }
            Family::CenteredQuadratic { center } => {
                let (gap, u) = toward(center);
                Some((1.0 - gap * gap, u))
            }
            Family::GaussianBump { center, width } => {
                let (gap, u) = toward(center);
                Some(((-gap * gap / (2.0 * width * width)).exp(), u))
            }
        }
    }

    /// Exhaustive lattice maximization of `ḡ` over `B_k(1+ν)` (no refinement).
    pub fn optimal_value(&self, resolution: f64) -> Result<(f64, DVector<f64>)> {
        if !(resolution > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "resolution must be > 0, got {resolution}"
            )));
        }
        Ok(maximize_over_ball(|u| self.value(u), self.k, self.radius(), resolution, false))
    }
}

fn dist_sq(u: &DVector<f64>, c: &[f64]) -> f64 {
    u.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Monte-Carlo estimate of the gradient outer-product matrix `H^r`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditioningReport {
    /// Top-k singular values, descending.
    pub singular_values: Vec<f64>,
    pub alpha_hat: f64,
    pub n_samples: usize,
}

/// Hidden reward model plus query-counting oracle.
#[derive(Clone, Debug)]
pub struct Environment {
    a: LinearParamMatrix,
    mean: MeanRewardSpec,
    sigma: f64,
    seed: u64,
    rng: ChaCha8Rng,
    query_count: u64,
    budget: Option<u64>,
}

impl Environment {
    pub fn new(a: LinearParamMatrix, mean: MeanRewardSpec, sigma: f64, seed: u64) -> Result<Self> {
        if a.k() != mean.k {
            return Err(Error::ShapeMismatch {
                expected: format!("A with k = {}", mean.k),
                got: format!("A with k = {}", a.k()),
            });
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        if !(mean.nu > 0.0) {
            return Err(Error::InvalidParameter(format!("nu must be > 0, got {}", mean.nu)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM);
        Ok(Self {
            a,
            mean,
            sigma,
            seed,
            rng,
            query_count: 0,
            budget: None,
        })
    }

    pub fn from_descriptor(desc: &EnvDescriptor) -> Result<Self> {
        let mean = MeanRewardSpec::new(desc.family.clone(), desc.k, desc.nu)?;
        let a = match &desc.a {
            MatrixSpec::Keyword(kw) if kw == "random_orthonormal" => {
                let mut rng = ChaCha8Rng::seed_from_u64(desc.seed);
                rng.set_stream(MATRIX_STREAM);
                LinearParamMatrix::random(desc.k, desc.d, &mut rng)?
            }
            MatrixSpec::Keyword(kw) => {
                return Err(Error::InvalidParameter(format!("unknown matrix keyword {kw:?}")))
            }
            MatrixSpec::RowMajor(v) => {
                if v.len() != desc.k * desc.d {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} entries (k x d)", desc.k * desc.d),
                        got: format!("{} entries", v.len()),
                    });
                }
                LinearParamMatrix::from_rows(&DMatrix::from_row_slice(desc.k, desc.d, v))?
            }
        };
        Self::new(a, mean, desc.sigma, desc.seed)
    }

    /// Cap the total number of reward queries.
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn set_budget(&mut self, budget: u64) {
        self.budget = Some(budget);
    }

    pub fn a(&self) -> &LinearParamMatrix {
        &self.a
    }

    pub fn mean_spec(&self) -> &MeanRewardSpec {
        &self.mean
    }

    pub fn d(&self) -> usize {
        self.a.d()
    }

    pub fn k(&self) -> usize {
        self.a.k()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn nu(&self) -> f64 {
        self.mean.nu
    }

    pub fn c2(&self) -> f64 {
        self.mean.c2()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    /// Queries left before the budget is exhausted (`u64::MAX` when uncapped).
    pub fn remaining(&self) -> u64 {
        match self.budget {
            Some(b) => b.saturating_sub(self.query_count),
            None => u64::MAX,
        }
    }

    pub fn radius(&self) -> f64 {
        self.mean.radius()
    }

    pub fn check_domain(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}-vector", self.d()),
                got: format!("{}-vector", x.len()),
            });
        }
        let norm = x.norm();
        let radius = self.radius();
        if !(norm <= radius * (1.0 + DOMAIN_SLACK)) {
            return Err(Error::OutOfDomain { norm, radius });
        }
        Ok(())
    }

    /// Noiseless mean reward `ḡ(Ax)`; free of charge.
    pub fn mean_reward(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.mean.value(&(self.a.matrix() * x)))
    }

    /// One noisy reward `ḡ(Ax) + η`; consumes one unit of budget.
    pub fn sample_reward(&mut self, x: &DVector<f64>) -> Result<f64> {
        let mean = self.mean_reward(x)?;
        if self.remaining() == 0 {
            return Err(Error::InsufficientBudget {
                requested: 1,
                remaining: 0,
            });
        }
        self.query_count += 1;
        if self.sigma == 0.0 {
            return Ok(mean);
        }
        let eta: f64 = StandardNormal.sample(&mut self.rng);
        Ok(mean + self.sigma * eta)
    }

    /// `∇r̄(x) = Aᵀ ∇ḡ(Ax)`.
    pub fn gradient_mean_reward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_domain(x)?;
        let u = self.a.matrix() * x;
        Ok(self.a.matrix().tr_mul(&self.mean.gradient(&u)))
    }

    /// `∇²r̄(x) = Aᵀ ∇²ḡ(Ax) A`.
    pub fn hessian_mean_reward(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let a = self.a.matrix();
        let u = a * x;
        Ok(a.transpose() * self.mean.hessian(&u) * a)
    }

    /// `max ḡ` over `B_k(1+ν)` by lattice search; since `A` is row-orthonormal
    /// this is also the best mean reward over the whole strategy ball.
    pub fn optimal_value(&self, resolution: f64) -> Result<(f64, DVector<f64>)> {
        self.mean.optimal_value(resolution)
    }

    /// Estimate `H^r` under the normalized uniform measure on `S^{d−1}`:
    /// `Ĥ = (1/n) Σ ∇r̄(x_s)∇r̄(x_s)ᵀ`. Multiply by the sphere's surface area
    /// `2π^{d/2}/Γ(d/2)` to convert to the surface-measure integral.
    pub fn estimate_conditioning(&self, n_samples: usize) -> Result<ConditioningReport> {
        if n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
        }
        let d = self.d();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(CONDITIONING_STREAM);
        let mut h = DMatrix::<f64>::zeros(d, d);
        for _ in 0..n_samples {
            let x = sample_unit_sphere(d, &mut rng);
            let g = self.gradient_mean_reward(&x)?;
            h.ger(1.0, &g, &g, 1.0);
        }
        h /= n_samples as f64;
        let mut eig: Vec<f64> = h
            .symmetric_eigenvalues()
            .iter()
            .map(|v| v.abs())
            .collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        eig.truncate(self.k());
        Ok(ConditioningReport {
            alpha_hat: *eig.last().expect("k >= 1"),
            singular_values: eig,
            n_samples,
        })
    }
}

/// Either an explicit row-major `k × d` array or the keyword `"random_orthonormal"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    RowMajor(Vec<f64>),
    Keyword(String),
}

/// JSON description of an environment:
/// `{family, params, k, d, sigma, nu, seed, A}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    #[serde(flatten)]
    pub family: Family,
    pub k: usize,
    pub d: usize,
    pub sigma: f64,
    pub nu: f64,
    pub seed: u64,
    #[serde(rename = "A")]
    pub a: MatrixSpec,
}

impl EnvDescriptor {
    pub fn build(&self) -> Result<Environment> {
        Environment::from_descriptor(self)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}
