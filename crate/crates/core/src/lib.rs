//! Label-similarity curriculum learning.
//!
//! Instead of training a classifier against fixed one-hot targets, every
//! class starts with a soft target built from how similar it is to the other
//! classes. The off-class mass is then cooled geometrically epoch by epoch
//! until the targets become one-hot.
//!
//! - [`similarity`]: class-similarity matrices from embeddings, attribute
//!   vectors or a label hierarchy (simrank), plus spectral analysis.
//! - [`curriculum`]: target schedules, baseline encodings and an executable
//!   check of the curriculum axioms.
//! - [`model`]: linear and one-hidden-layer softmax classifiers with
//!   analytic gradients and SGD.
//! - [`data`]: datasets, stratified subsampling and a synthetic generator.
//! - [`experiments`]: trials, metrics, aggregation, rank tests and suites.

pub mod curriculum;
pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
pub mod similarity;

pub use error::{Error, Result};
