//! Numerics for variable-exponent Sobolev spaces on R^N: Luxemburg norms,
//! localized best Sobolev constants (including at infinity), escaping-bubble
//! energy expansions and a mountain-pass solver for the critical
//! p(x)-Laplacian with concentration diagnostics.

pub mod bubbles;
pub mod constants;
pub mod error;
pub mod fields;
pub mod grid;
pub mod quad;
pub mod scenario;
pub mod solver;
pub mod spaces;

pub use error::{Error, Result};
