//! Wiener-chaos integrand calculus and the limit formulas built on it.

pub mod limits;
pub mod node;

pub use limits::*;
pub use node::*;
