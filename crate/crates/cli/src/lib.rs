//! Pipeline commands behind the `evmarket` binary.
// NaN-rejecting checks read as !(x > 0.0) on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
