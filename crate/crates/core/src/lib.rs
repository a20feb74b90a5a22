#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod bench;
pub mod config;
pub mod converter;
pub mod costing;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod mppt;
pub mod plot;
pub mod pv;
pub mod report;
pub mod scenarios;
pub mod sim;
mod solve;

pub use error::{Error, Result};
pub use exec::Exec;
