//! Forced-choice logit-probe audits of geopolitical bias: file formats,
//! providers, run orchestration and reports around `geoprobe-core`.

pub mod analysis;
pub mod bank_io;
pub mod client;
pub mod diag;
pub mod manifest;
pub mod profiles;
pub mod report;
pub mod runner;
pub mod store;
pub mod wire;

pub use geoprobe_core as core;
