//! Iterative, sparsity-aware SDP-relaxed K-means for high-dimensional
//! Gaussian mixtures.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the shared domain types (datasets, assignments,
//!   membership matrices, covariance models) and the mis-clustering metric.
//! * [`simgen`] draws synthetic two-component mixtures.
//! * [`spectral`] provides spectral clustering, used both to initialise the
//!   iterative drivers and to round SDP solutions.
//! * [`sdp`] is an ADMM solver for the K-means SDP relaxation.
//! * [`lasso`] and [`isee`] estimate the innovated transform `Ω X` blockwise
//!   when the covariance is unknown.
//! * [`select`] holds the feature-selection thresholds.
//! * [`iterate`] wires everything into the alternating select/cluster loops.
//! * [`certificate`] builds the explicit dual certificate for exact recovery.
//! * [`experiment`] runs replicated simulation grids and writes CSV tables.

pub mod certificate;
pub mod error;
pub mod experiment;
pub mod io;
pub mod isee;
pub mod iterate;
pub mod lasso;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sdp;
pub mod select;
pub mod simgen;
pub mod spectral;
mod topeig;

pub use error::{Error, Result};
pub use model::{Assignment, CovarianceModel, Dataset, MembershipMatrix};
