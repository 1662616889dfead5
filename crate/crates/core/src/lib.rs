//! Core of the geoprobe forced-choice audit harness.
//!
//! Pure computation only: scenario banks, prompt assembly, the provider
//! abstraction, scoring, coherence filtering, statistics, the free-generation
//! probe and the synthetic model used as a test oracle. IO, HTTP and the CLI
//! live in the `geoprobe` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bank;
pub mod coherence;
pub mod freegen;
pub mod math;
pub mod prompt;
pub mod provider;
pub mod scoring;
pub mod stats;
pub mod synthetic;
