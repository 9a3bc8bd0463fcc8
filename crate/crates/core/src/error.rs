use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated one of its invariants. `key` names the offending field.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: &'static str, reason: String },

    #[error("gain index {index} out of range (levels: {levels})")]
    GainIndexOutOfRange { index: usize, levels: usize },

    #[error("battery level {units} out of range [0, {capacity}]")]
    BatteryOutOfRange { units: i64, capacity: u32 },

    #[error("backscatter infeasible at battery {units} (needs at least {required})")]
    InfeasibleAction { units: u32, required: u32 },

    #[error("crossover probability {0} outside [0, 0.5]")]
    CrossoverOutOfRange(f64),

    #[error("transition matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare {
        row: usize,
        len: usize,
        expected: usize,
    },

    #[error("transition row {row} sums to {sum} (residual {residual:e})")]
    RowSum { row: usize, sum: f64, residual: f64 },

    #[error("transition entry [{row}][{col}] = {value} outside [0, 1]")]
    BadEntry { row: usize, col: usize, value: f64 },

    #[error("chain is not irreducible and aperiodic: {0}")]
    NotErgodic(String),

    #[error("{what} did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("linear system is singular: {0}")]
    Singular(&'static str),

    #[error("state space of {states} states too large for exhaustive enumeration (limit {limit})")]
    TooManyStates { states: usize, limit: usize },

    #[error("policy selects infeasible action at state {0}")]
    InfeasiblePolicy(usize),

    #[error("malformed model: {0}")]
    Model(String),

    #[error("brute-force optimum does not dominate at state {state}: {best} < {other}")]
    Dominance { state: usize, best: f64, other: f64 },

    #[error("Q-table entry left its bound: |Q| = {value} > {bound}")]
    QDiverged { value: f64, bound: f64 },
}
