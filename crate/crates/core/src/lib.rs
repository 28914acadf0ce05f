//! Conformal prediction sets (TPS, APS, RAPS) for classifier scores, and
//! recalibration of their thresholds for a shifted target distribution from
//! unlabeled target scores only.
//!
//! The crate is organized bottom-up:
//!
//! - [`scores`]: validated score matrices, labeled/unlabeled datasets, file I/O.
//! - [`conformal`]: set functions, conformity scores, calibration, evaluation.
//! - [`qtc`]: quantile-thresholded-confidence estimators and recalibration.
//! - [`regression`]: regression baselines (feature extractors, synthetic shift
//!   corpus, a small MLP trained from scratch).
//! - [`toymodel`]: the binary spurious-correlation model with Monte Carlo
//!   oracles and trial runner for the finite-sample bound.
//! - [`synthetic`]: a multi-class synthetic score generator used by tests and demos.
//! - [`cli`]: the `cshift` command-line front end.

pub mod cli;
pub mod conformal;
pub mod error;
pub mod kv;
pub mod qtc;
pub mod regression;
pub mod scores;
pub mod seed;
pub mod synthetic;
pub mod toymodel;

pub use conformal::{calibrate, evaluate, CoverageReport, PredictorSpec, Threshold};
pub use error::{Error, Result};
pub use qtc::{recalibrate, QtcEstimate, QtcMethod};
pub use scores::{Dataset, LabeledDataset, ScoreMatrix, UnlabeledDataset};
