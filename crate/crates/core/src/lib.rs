//! Class-activation-map coefficients computed as (approximate) Shapley
//! values of the activation maps.
//!
//! The crate runs small CNNs split at an activation layer, computes channel
//! coefficients with seven methods, assembles explanation maps, and scores
//! them with faithfulness and localization metrics. Exact subset enumeration
//! serves as the ground truth the estimators are checked against.

pub mod attribution;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod heatmap;
pub mod io;
pub mod network;
pub mod shapley;
pub mod synthetic;
pub mod tensor;

pub use attribution::{CoefficientVector, ExplanationMap, Method};
pub use error::{Error, Result};
pub use explain::{explain, ExplainOptions, Explanation};
pub use network::{ActivationStack, HeadTrace, Layer, ModelGraph};
pub use tensor::Tensor;
