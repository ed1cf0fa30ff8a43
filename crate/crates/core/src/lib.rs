//! Unbinned maximum-likelihood fitting with two interchangeable evaluation paths.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod eval;
pub mod expr;
pub mod fastmath;
pub mod fit;
pub mod graph;
pub mod model_file;
pub mod pdfs;
pub mod sampling;
