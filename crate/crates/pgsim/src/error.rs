//! Error types shared across the simulator.

use thiserror::Error;

/// Unified error type for geometry sampling, channel assembly, calibration
/// and experiment orchestration.
#[derive(Debug, Error)]
pub enum PgError {
    /// Rejection sampling could not place a scatterer under the
    /// minimum-distance constraint within the attempt budget.
    #[error(
        "rejection budget exceeded: scatterer {scatterer} not placed after {attempts} attempts \
         (min distance {min_distance} m is infeasible for this density)"
    )]
    RejectionBudgetExceeded {
        scatterer: usize,
        attempts: usize,
        min_distance: f64,
    },

    /// A delay required with an active link indicator is zero, which would
    /// divide by zero in the transfer-matrix entry.
    #[error("degenerate delay: tau_{matrix}[{row},{col}] = 0 with an active link")]
    DegenerateDelay {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    /// The scatterer graph does not dissipate energy: spectral radius of B
    /// is at or above one (minus margin).
    #[error("unstable scatterer graph: spectral radius {rho} >= {limit} at frequency index {frequency_index}")]
    UnstableGraph {
        rho: f64,
        limit: f64,
        frequency_index: usize,
    },

    /// The dense linear solve for (I - B) X = T failed.
    #[error("singular solve: (I - B) is numerically singular at frequency index {frequency_index}")]
    SingularSolve { frequency_index: usize },

    /// Power iteration did not converge within its budget.
    #[error("spectral-radius iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    /// The cluster decay target produces a non-dissipative graph.
    #[error(
        "infeasible beta: (N_S - 1) * beta^2 = {loop_gain} >= 1 for rho1 = {rho1_db_per_s} dB/s \
         (non-dissipative calibration)"
    )]
    InfeasibleBeta { loop_gain: f64, rho1_db_per_s: f64 },

    /// The original-parametrization gain violates the row-sum stability bound.
    #[error("infeasible gain: g = {gain} >= 1 violates the row-sum stability bound")]
    InfeasibleGain { gain: f64 },

    /// A closed form was requested outside its convergence region.
    #[error("divergent series: (N_S - 1) * beta^2 = {loop_gain} >= 1")]
    DivergentSeries { loop_gain: f64 },

    /// K-factor calibration requires a line-of-sight path.
    #[error("no LOS path: a K-factor target requires los_visible = true")]
    NoLosPath,

    /// CIR synthesis requires a uniform frequency grid.
    #[error("nonuniform grid: spacing varies by {max_deviation} relative")]
    NonuniformGrid { max_deviation: f64 },

    /// Decay-rate fitting needs at least two detectable cluster peaks.
    #[error("insufficient clusters: {found} cluster peak(s) detected, need at least 2")]
    InsufficientClusters { found: usize },

    /// Decay-rate fitting needs enough taps in the first cluster.
    #[error("insufficient taps: {found} tap(s) in the first cluster above the floor, need {needed}")]
    InsufficientTaps { found: usize, needed: usize },

    /// A K-ratio was requested for a realization with zero NLOS energy.
    #[error("division by zero: ||H_NLOS|| = 0 in realization {realization}")]
    DivisionByZero { realization: usize },

    /// Config file could not be read or parsed.
    #[error("config parse error: {0}")]
    ParseError(String),

    /// Config parsed but violates an invariant.
    #[error("config validation error: {0}")]
    ValidationError(String),

    /// Output files could not be written.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl PgError {
    /// Process exit code per the CLI contract: 2 for configuration problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PgError::ParseError(_) | PgError::ValidationError(_) | PgError::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, PgError>;
