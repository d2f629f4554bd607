//! Exact-arithmetic experiments on orbit counting and equidistribution for
//! the rational function field `K = F_q(Y)` at the place at infinity.

pub mod error;
pub mod expcli;
pub mod bttree;
pub mod gf;
pub mod laurent;
pub mod measures;
pub mod modgroup;
pub mod poly;
pub mod quad;

pub use error::{Error, Result};
