#![forbid(unsafe_code)]

//! Missing-data imputation for spatiotemporally correlated PV fleet timeseries.
//!
//! A fleet of photovoltaic inverters reports AC power on a fixed 5-minute
//! grid. Sensors drop out, loggers fail, and the resulting gaps bias every
//! downstream analysis. This crate recovers those gaps with a denoising
//! graph autoencoder that couples gated temporal convolutions with Chebyshev
//! spectral graph convolutions, so that an inverter's missing stretch can be
//! reconstructed from both its own history and its neighbours' signals.
//!
//! The crate is organised around the stages of that pipeline:
//!
//! - [`tensor`]: dense tensors with tape-based reverse-mode differentiation
//!   and an Adam optimizer, enough machinery to train the models here.
//! - [`graph`]: the inverter graph built from coordinates, its normalized
//!   and scaled Laplacians, and Chebyshev spectral convolution.
//! - [`data`]: CSV ingestion, missing-pattern profiling, physics-validated
//!   augmentation, configurable corruption masks, window slicing, and a
//!   synthetic fleet generator for testing.
//! - [`model`]: the autoencoder itself: construction, training, imputation,
//!   and checkpointing.
//! - [`baselines`]: six reference imputers (mean, linear interpolation, KNN,
//!   MICE, MIDA, LRTC-TNN).
//! - [`eval`]: MAE/RMSE restricted to corrupted entries, plus outlier and
//!   seasonality recovery metrics built on an STL decomposition.
//!
//! The `solarmend` binary in this workspace wires the stages into CLI
//! subcommands; the guide under `book/` walks through the concepts with
//! runnable examples.

pub mod baselines;
pub mod data;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod tensor;

mod error;

pub use error::{Error, Result};
