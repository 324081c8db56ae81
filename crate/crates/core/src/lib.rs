//! Constructive control-Lyapunov function synthesis for smooth systems that
//! admit damping feedback.
//!
//! The crate builds, verifies and simulates:
//!
//! - strict Lyapunov functions assembled from a known weak one plus an
//!   auxiliary direction field, with every scalar bound in the construction
//!   tabulated as a monotone envelope;
//! - damping feedbacks of arbitrarily small norm, including a correction
//!   path for dynamics that are not affine in the input;
//! - integral disturbance-gain certificates for the closed loop under
//!   actuator errors;
//! - seeded sampling certificates for every assumption and constructed
//!   inequality, reproducible bit-for-bit across worker counts.

#![forbid(unsafe_code)]

pub mod envelope;
pub mod error;
pub mod expr;
pub mod field;
pub mod iiss;
pub mod quad;
pub mod sampling;
pub mod scalar;
pub mod sim;
pub mod synthesis;
pub mod systems;
pub mod verify;

pub use error::{Error, EvalError, ParseError, Result};
