//! Invariant subgraph learning for out-of-distribution graph classification.
//!
//! A learned edge extractor picks a subgraph that is both sufficient and
//! necessary for the label. Training minimizes a bound on that risk built from
//! a permutation-invariant graph structure distance, and at test time the
//! invariant classifier is fused with a classifier on the discarded
//! complement.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below fix the precision.

pub mod autodiff;
pub mod checkpoint;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod gsd;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pmp;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use graph::{Dataset, Graph};
pub use matrix::Matrix;
pub use model::ModelParams;
pub use objective::{fit, TrainConfig};
pub use scalar::Scalar;

pub type Graph64 = graph::Graph<f64>;
pub type Dataset64 = graph::Dataset<f64>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Dataset32 = graph::Dataset<f32>;
pub type Matrix32 = matrix::Matrix<f32>;
pub type ModelParams32 = model::ModelParams<f32>;
