//! Unsupervised anomaly detection for semantic trajectories.
//!
//! Normal user-POI visit behaviour is learned from a training period with
//! collaborative filtering (truncated SVD or a neural model fusing an MLP
//! tower with feature-augmented matrix factorization). Users whose
//! test-period visits deviate from the learned expectation receive a high
//! surprise score.

pub mod baselines;
pub mod demo;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod matrix;
pub mod ncf;
pub mod rng;
pub mod scoring;
pub mod synthgen;
pub mod trajectory;

pub use error::{Error, Result};
