//! Support library for the `stochsdp` binary: on-disk file formats and the
//! risk-spec grammar. Split out of `main.rs` so the pieces are unit-testable
//! and reusable from integration tests.

pub mod files;
pub mod grammar;
