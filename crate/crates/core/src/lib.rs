//! Deterministic single-process simulator of joint gradient-and-loss based
//! clustered federated learning.
//!
//! M devices with non-IID data self-assign to K clusters each round by
//! combining gradient-direction similarity with training loss, then train
//! per-cluster global models by federated averaging. Everything is driven
//! by one master seed: data generation, model initialization, per-device
//! batch streams, and pin selection all derive from it, so full multi-round
//! trajectories are bitwise reproducible regardless of worker count.
//!
//! Module map:
//! - [`nn`]: 3-layer ReLU MLP, softmax cross-entropy, analytic backprop.
//! - [`clustering`]: model deltas, gradient similarity, the joint argmax.
//! - [`federation`]: the round engine, aggregation, empty-cluster policies.
//! - [`data`]: synthetic cluster tasks, class-subset splits, IDX loading.
//! - [`metrics`]: purity, averaged test accuracy, loss curves.
//! - [`harness`]: experiment config, runs, sweeps, CSV output.

pub mod clustering;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod seeding;

pub use error::{Error, Result};
