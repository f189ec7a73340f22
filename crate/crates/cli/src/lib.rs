//! Command-line front end for the `uavtwin` digital twin.
//!
//! The binary is a thin clap wrapper over [`commands`]; everything it does
//! is reachable from tests through this library.

// NaN-rejecting range checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod probe;
pub mod sweep;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
