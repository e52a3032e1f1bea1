//! Core library for a regional low-carbon policy workbench.
//!
//! Three layers, usable independently:
//!
//! * [`text`] — turns a corpus of government work reports into a keyword
//!   attention index per region-year.
//! * [`carbon`] — energy-balance carbon accounting: emission factors from
//!   fuel heat parameters, totals, and per-capita emissions.
//! * [`panel`] / [`models`] — panel-data kernel (design matrices, OLS via
//!   orthogonal decomposition, robust covariance) and the estimators built
//!   on it: two-way fixed effects, random effects with a Hausman test,
//!   two-stage least squares, moderation with simple slopes, and threshold
//!   regression with bootstrap inference.
//!
//! Everything is deterministic given a seed: parallel loops derive
//! per-task RNG streams and collect in stable order.

pub mod carbon;
pub mod error;
pub mod models;
pub mod panel;
pub mod text;

pub use carbon::{CarbonResult, EmissionFactorParams, FuelAccount};
pub use error::{Error, Result};
pub use models::{
    EstimationResult, HausmanResult, ModelSpec, SimpleSlope, ThresholdFit, TslsResult,
};
pub use panel::{DesignMatrix, OlsFit, PanelDataset};
pub use text::{AttentionIndex, Document, KeywordCounts, KeywordDictionary};
