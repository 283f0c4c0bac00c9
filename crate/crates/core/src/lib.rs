//! Perturbative reducibility of quasi-periodic skew-product flows on
//! T^d x SL(2,R): Lindstedt series, tree expansions, multiscale
//! renormalization, numerical verification and parameter scans.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod io;
pub mod measure;
pub mod model;
pub mod renorm;
pub mod series;
pub mod smalldiv;
pub mod trees;
pub mod verify;

pub use error::{Error, Result};
