//! Backstepping boundary stabilization of linearized PVD cross-diffusion
//! systems on a linearly growing film, in rescaled coordinates.

// Negated comparisons are deliberate: they reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod error;
pub mod exec;
pub mod fit;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod nonlinear;
pub mod pde;
pub mod quad;
pub mod transform;

pub use error::{Error, Result};
pub use exec::Exec;
