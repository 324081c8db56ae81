//! Error types shared across the crate.

use thiserror::Error;

/// Failure during evaluation of a field or expression.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    /// A domain-restricted function left its domain (sqrt of a negative,
    /// log of a non-positive, general power of a non-positive base).
    #[error("domain error: {what}{}", context.as_deref().map(|c| format!(" in `{c}`")).unwrap_or_default())]
    Domain {
        what: String,
        /// Offending subexpression, when evaluation came from a parsed tree.
        context: Option<String>,
    },
    /// A gradient was requested beyond the supported nesting depth.
    #[error("automatic differentiation depth exceeded (three nested levels supported)")]
    DepthExceeded,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    /// An evaluation produced a non-finite number.
    #[error("non-finite value produced during evaluation{}", context.as_deref().map(|c| format!(" of {c}")).unwrap_or_default())]
    NonFinite { context: Option<String> },
}

impl EvalError {
    pub fn domain(what: impl Into<String>) -> Self {
        EvalError::Domain {
            what: what.into(),
            context: None,
        }
    }

    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            EvalError::Domain {
                what,
                context: None,
            } => EvalError::Domain {
                what,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }
}

/// Failure while parsing an expression string.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message} at position {position}")]
pub struct ParseError {
    pub message: String,
    /// 1-based character position in the source.
    pub position: usize,
}

impl ParseError {
    pub fn new(message: impl Into<String>, position: usize) -> Self {
        ParseError {
            message: message.into(),
            position,
        }
    }
}

/// Top-level library error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("{what} is not positive definite: value {value:.6e} at {witness:?}")]
    NotPositiveDefinite {
        what: String,
        value: f64,
        witness: Vec<f64>,
    },
    #[error("near-kernel negativity fails: min(L_f L_G V, L_f V) = {value:.6e} at {witness:?}")]
    KernelNegativityViolation { value: f64, witness: Vec<f64> },
    #[error("constraint {constraint} infeasible at level {level:.6e} (cap {cap:.6e})")]
    Infeasible {
        constraint: String,
        level: f64,
        cap: f64,
    },
    #[error("no positive damping gain found at level {level:.6e}: remainder growth too strong")]
    GainInfeasible { level: f64 },
    #[error("quadrature failed to converge: requested {requested:.3e}, achieved {achieved:.3e}")]
    Quadrature { requested: f64, achieved: f64 },
    #[error("level-set sampling starved at level {level:.6e} after widening the shell tolerance")]
    ShellStarved { level: f64 },
    #[error("integrator step underflow at t = {t:.6e} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("state blow-up at t = {t:.6e}: |x| = {norm:.3e} exceeds 1e9")]
    Blowup { t: f64, norm: f64 },
    #[error("sampled bound |L_g U| <= D(U) still fails after {retries} delta halvings")]
    DGainExhausted { retries: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
