//! Command-line driver: configuration parsing and the `solve`, `audit` and
//! `probe-uniqueness` commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;
