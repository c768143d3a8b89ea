//! Library half of the `dcres` command-line tool: scenario configuration,
//! the subcommand implementations, and the SVG renderers. The binary in
//! `main.rs` is a thin argument-parsing shell over this crate, so tests and
//! other tools can drive the exact same code paths in process.

// validators negate comparisons (`!(x > 0.0)`) so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
