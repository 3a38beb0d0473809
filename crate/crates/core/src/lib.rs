//! Hybrid quantum-classical neural networks built on a dense statevector
//! simulator.
//!
//! The numeric core ([`qsim`], [`grad`], [`nn`], [`models`]) is generic over
//! the real scalar type through [`Scalar`]; the aliases below pin the
//! double-precision instantiation used by the training harness.

pub mod bench;
pub mod data;
pub mod error;
pub mod grad;
pub mod models;
pub mod nn;
pub mod qsim;
pub mod scalar;
pub mod templates;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type StateVector = qsim::StateVector<f64>;
pub type StateVector32 = qsim::StateVector<f32>;
pub type ParamTensor = grad::ParamTensor<f64>;
pub type Tensor = nn::Tensor<f64>;
pub type HybridModel = models::HybridModel<f64>;
pub type HybridModel32 = models::HybridModel<f32>;
