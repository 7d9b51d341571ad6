//! Remaining-useful-life prediction with concept-bottleneck models.
//!
//! The numerics are generic over the floating-point type; the aliases below
//! fix it to `f64`, which every command and test uses.

pub mod datagen;
pub mod error;
pub mod experiment;
pub mod intervene;
pub mod metrics;
pub mod models;
pub mod netcore;
pub mod preprocess;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = netcore::Tensor<f64>;
pub type ParameterSet = netcore::ParameterSet<f64>;
pub type Model = models::Model<f64>;
pub type Sample = preprocess::Sample<f64>;
pub type BottleneckOutput = models::BottleneckOutput<f64>;
pub type CyclePrediction = models::CyclePrediction<f64>;

pub type Tensor32 = netcore::Tensor<f32>;
pub type Model32 = models::Model<f32>;
