//! Command-line workbench wiring: the TOML config schema, a synthetic
//! fixture generator, the config-driven pipeline, and publication-style
//! table rendering.

pub mod config;
pub mod fixture;
pub mod pipeline;
pub mod table;
