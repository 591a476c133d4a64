//! Clinical deterioration forecasting from three routinely measured vital
//! signs and a handful of static patient attributes.
//!
//! The pipeline, in order:
//!
//! - [`cohort`]: parse encounter tables, filter the cohort, label outcomes and
//!   cut 24-hour input windows per prediction horizon;
//! - [`preprocess`]: Z-score, natural cubic spline and 15-minute resampling
//!   into a 96×3 grid;
//! - [`models`]: the dilated-LSTM fusion network and its two ablations;
//! - [`training`]: focal loss, ADAM, the three-phase schedule and stratified
//!   cross-validation;
//! - [`metrics`] and [`analysis`]: accuracy/AUROC/AUPRC, occlusion and
//!   ablation reports;
//! - [`synth`]: a seeded synthetic cohort with a known deterioration signature.

pub mod analysis;
pub mod cohort;
pub mod dataset;
mod error;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
