//! File formats, configuration, parallel runners and the command-line
//! interface on top of `ltate-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod io;
pub mod parallel;
