//! Numerical toolkit for Lipschitz functions on finite-dimensional normed
//! spaces: asymptotic slopes, Lipschitz extensions, finite-rank approximation
//! of functions on bounded sequences, and energy-density checks for Sobolev and
//! BV functionals.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod families;
pub mod field;
pub mod lipschitz;
pub mod map_operator;
pub mod mollify;
pub mod normed_space;
pub mod pipeline;
pub mod sampling;
pub mod sobolev_bv;
pub mod verify;

pub use error::{Error, Result, ResultExt};
pub use field::{FnField, ScalarField};
pub use normed_space::{dual_sphere_net, DualNet, Exponent, NormKind, NormedSpace};
