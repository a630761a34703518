//! Oracles and check suites shared by the unit tests and the acceptance run.
#![allow(dead_code)]

pub mod admm_suite;
pub mod data_suite;
pub mod grad_suite;
pub mod metric_suite;
pub mod red_suite;
pub mod simplex_suite;
pub mod unroll_suite;
