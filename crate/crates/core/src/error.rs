use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("matrix has an invalid entry {value} at ({row}, {col})")]
    InvalidProbability { row: usize, col: usize, value: f64 },

    #[error("chain is reducible: {} communicating classes", classes.len())]
    Reducible { classes: Vec<Vec<usize>> },

    #[error("at least one user is required")]
    EmptyUserList,

    #[error("joint state {state} has zero self-transition probability")]
    SelfLoopViolated { state: usize },

    #[error("user model `{label}` is invalid: {reason}")]
    InvalidUser { label: String, reason: String },

    #[error("explicit joint chain is invalid: {0}")]
    InvalidJointChain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("expected a two-state user with support (+1, -1), got {support:?}")]
    WrongShape { support: Vec<i64> },

    #[error("generation probability undefined for p = q = 1")]
    Degenerate,

    #[error("battery level {b} outside 0..={b_max}")]
    BatteryOutOfRange { b: usize, b_max: usize },

    #[error("instance too large: {size} state-action slots exceed cap {cap}")]
    InstanceTooLarge { size: u128, cap: u128 },

    #[error("action {action:?} is not allowed in state {state}")]
    ActionNotAllowed { state: usize, action: Vec<i64> },

    #[error("instance built in {found} mode, operation requires {expected} mode")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("delta must be a nonnegative finite number, got {0}")]
    InvalidDelta(f64),

    #[error("LP solver failed: {0}")]
    NumericalFailure(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("efficient LLR is zero (numerator {llr_o}, denominator {llr_e})")]
    EfficientLlrZero { llr_o: f64, llr_e: f64 },

    #[error("decay fit needs at least 4 positive LLR points, got {usable}")]
    TooFewPoints { usable: usize },

    #[error("user {user} is not net generating (drift {drift})")]
    NotAllGenerating { user: usize, drift: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

impl Error {
    /// Errors that come out of the LP solver rather than from the model.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::NumericalFailure(_) | Error::Internal(_))
    }
}
