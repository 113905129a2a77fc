//! Adaptive sensor placement for modal testing.
//!
//! The library couples a structural modal model (plate finite elements or an
//! analytical cantilever beam) with a sensor-placement decision environment
//! whose reward is the determinant of a Fisher information matrix. A recurrent
//! actor-critic agent is trained on that environment under a dual-curriculum
//! regime (prioritised replay plus level mutation) and benchmarked against the
//! effective-independence placement heuristic.

// `!(x > 0.0)` is used deliberately so NaN fails validation checks, and
// index-based loops are kept where they mirror the written matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod agent;
pub mod cli;
pub mod config;
pub mod curriculum;
pub mod env;
pub mod eval;
pub mod modal;
pub mod report;
pub mod reward;

mod error;

pub use error::{Error, Result};
