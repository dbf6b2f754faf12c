// Negated comparisons deliberately reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod energy;
pub mod error;
pub mod exec;
pub mod grid;
pub mod kernels;
pub mod moser;
pub mod mpa;
pub mod nonlinearity;
pub mod quadrature;
pub mod solver;
pub mod special;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
