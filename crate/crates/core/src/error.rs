use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("rank < k: matrix has numerical rank {rank}, need {k}")]
    RankDeficient { rank: usize, k: usize },

    #[error("query outside B_d(1+nu): |x| = {norm} > {radius}")]
    OutOfDomain { norm: f64, radius: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate recovery: sigma_k = {sigma_k:e} (singular values {singular_values:?})")]
    DegenerateRecovery {
        sigma_k: f64,
        singular_values: Vec<f64>,
    },

    #[error("budget infeasible: phase 1 needs n1 = {n1:e} rounds but n = {n}{}", minimal_n_hint(*.minimal_n))]
    BudgetInfeasible {
        n: u64,
        n1: f64,
        minimal_n: Option<f64>,
    },

    #[error("step-size infeasible: increase nu or m_phi (interval lower end {lo}, domain cap {cap})")]
    StepSizeInfeasible { lo: f64, cap: f64 },

    #[error("insufficient budget: {requested} queries requested, {remaining} remaining")]
    InsufficientBudget { requested: u64, remaining: u64 },

    #[error("no data")]
    NoData,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn minimal_n_hint(minimal_n: Option<f64>) -> String {
    match minimal_n {
        Some(n) => format!(" (smallest feasible n is about {n:e})"),
        None => " (no feasible n found)".to_string(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable tag used in sweep status columns.
    pub fn status(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DegenerateRecovery { .. } => "rank_collapse",
            Error::BudgetInfeasible { .. } => "budget_infeasible",
            Error::StepSizeInfeasible { .. } => "step_size_infeasible",
            Error::InsufficientBudget { .. } => "insufficient_budget",
            Error::NoData => "no_data",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
            Error::Csv(_) => "csv_error",
        }
    }
}
