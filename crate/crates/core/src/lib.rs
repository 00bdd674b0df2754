// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-stage moving-window change-point detection for high-dimensional
//! piecewise linear regression.
//!
//! Stage 1 ([`mosum`]) scans a grid with a moving-sum contrast of local Lasso
//! fits and keeps thresholded local maximisers; Stage 2 ([`refine`]) sharpens
//! each candidate by minimising a two-sided residual objective. The
//! [`multiscale`] module combines several bandwidths through anchor
//! estimators and clusters. [`tuning`] selects the penalty and the number of
//! change points by odd/even sample-splitting cross validation.

pub mod data;
pub mod error;
pub mod io;
pub mod lasso;
pub mod metrics;
pub mod mosum;
pub mod multiscale;
pub mod pipeline;
pub mod refine;
pub mod simgen;
pub mod tuning;

pub use data::Dataset;
pub use error::{MosegError, Result};
pub use lasso::{FitOptions, LassoFit, LassoProblem};
pub use mosum::{DetectorSeries, GridSpec, PreEstimate};
pub use multiscale::{Cluster, MultiscaleParams, MultiscaleState};
pub use pipeline::{MosegParams, PhaseTimings, SegmentationResult};
