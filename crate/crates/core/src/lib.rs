//! Self-supervised multi-order graph embedding for community discovery.

pub mod autodiff;
pub mod cluster;
pub mod error;
pub mod graph;
pub mod harness;
pub mod knn;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod spectral;
pub mod training;

pub use error::{Error, Result, StageContext};
