//! Hypergraph-based multivariate time-series forecasting at desk scale.
//!
//! The crate implements the MKH-Net architecture end to end: a reverse-mode
//! autodiff engine over dense arrays, hypergraph structure inference with
//! Gumbel-softmax sampling, three spatial encoders (implicit hypergraph,
//! explicit subgraph, dual hypergraph), a gated mixture-of-experts temporal
//! head with optional Gaussian uncertainty, and the full training/evaluation
//! protocol (Adam, plateau schedule, early stopping, MAE/RMSE/MAPE metrics).
//!
//! All numeric code is generic over the scalar type ([`scalar::Scalar`],
//! f32 or f64); the aliases below pin the f64 instantiation used by the CLI
//! and the acceptance suite.

pub mod array;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use rng::Rng;

/// f64 instantiations — the precision the shipped pipeline runs at.
pub type Array64 = array::Array<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Model64 = model::MkhNet<f64>;
pub type Dataset64 = dataset::MtsDataset<f64>;

/// f32 instantiations, for callers trading precision for footprint.
pub type Array32 = array::Array<f32>;
pub type Tape32 = autodiff::Tape<f32>;
