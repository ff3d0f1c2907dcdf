//! Penalization schemes for reflected Itô diffusions on convex domains.

// Negated comparisons such as `!(a < b)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod coefficients;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod path;
pub mod penalized;
pub mod rates;
pub mod reflected;
pub mod tolerance;

pub use error::{Error, Result};
