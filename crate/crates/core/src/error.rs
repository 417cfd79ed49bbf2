//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation (non-positive physical constant, bad shape, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The harvester activation threshold is not met even directly above the
    /// base station; the charging radius is empty.
    #[error("charging threshold unreachable: received power at altitude {altitude_m} m is below the activation threshold")]
    ThresholdUnreachable { altitude_m: f64 },

    /// Net power while hovering over the base station is not positive, so the
    /// battery can never be refilled.
    #[error("cannot charge: net hover charging power {net_w} W is not positive")]
    CannotCharge { net_w: f64 },

    /// Zero flight altitude makes the in-flight charging integral degenerate.
    #[error("degenerate charging geometry: flight altitude must be positive")]
    DegenerateGeometry,

    /// A route drains the battery below the allowed floor within one sortie.
    #[error("infeasible route: state of charge drops below the floor in sortie {sortie}")]
    InfeasibleRoute { sortie: usize },

    /// A task node cannot be visited even on a dedicated out-and-back sortie.
    #[error("infeasible instance: node {node} needs {required_m:.1} m of range, usable range is {usable_m:.1} m")]
    UnreachableNode {
        node: usize,
        required_m: f64,
        usable_m: f64,
    },

    /// Every node is masked during decoding. Unreachable for instances that
    /// pass the reachability check; kept as a hard failure rather than a panic.
    #[error("decoder dead end: every node is masked at step {step}")]
    DeadEnd { step: usize },

    /// A forward or backward pass produced a non-finite value.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Exhaustive solver invoked above its size bound.
    #[error("instance too large for exhaustive search: {n} task nodes (limit {limit})")]
    SizeLimit { n: usize, limit: usize },

    /// Cooperative per-instance time limit hit inside a solver.
    #[error("time limit exceeded")]
    Timeout,

    /// Checkpoint or file payload does not match the expected shape/layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
