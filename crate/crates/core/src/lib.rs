//! Multi-granularity graph pooling for video sequence representations.
//!
//! Frame feature maps are split into horizontal bands at several granularities,
//! each granularity becomes a graph with temporal and Euclidean neighbor edges,
//! and graph convolution, pooling and readout turn each graph into a vector. The
//! concatenated vectors are trained with batch-hard triplet and identity losses
//! and evaluated by CMC / mAP retrieval.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod gc;
pub mod graph;
pub mod harness;
pub mod model;
pub mod pooling;
pub mod retrieval;
pub mod synthetic;

pub use error::{GpnetError, Result};
