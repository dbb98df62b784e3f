//! Regression-suppressing repair of small feedforward classifiers.
//!
//! The pipeline localizes suspicious weights of one layer from gradient and
//! activation impacts on failed versus passed data, then searches new values
//! for only those weights with a particle swarm whose fitness rewards repaired
//! samples and penalizes regressions.

pub mod data;
pub mod error;
pub mod harness;
pub mod localization;
pub mod metrics;
pub mod nn;
pub mod pso;

pub use error::{Error, Result};
pub use nn::{Activation, Batch, DenseLayer, LayerGradient, LayerSpec, Matrix, Model, WeightRef};
