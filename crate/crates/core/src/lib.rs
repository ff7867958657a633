//! End-to-end latency estimation for microservice systems.
//!
//! The model combines learnable graph coarsening over the service call
//! graph, per-scale graph attention, adaptive fusion of the scale
//! embeddings, and a scene-gated mixture of expert regressors. The crate
//! also ships a synthetic system generator backed by an M/M/c queueing
//! oracle, a training loop with checkpointing, and an evaluation harness
//! with linear and MLP baselines.

pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod gat;
pub mod model;
pub mod multiscale;
pub mod numerics;
pub mod scene;
pub mod simkit;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, Tape, Var};
