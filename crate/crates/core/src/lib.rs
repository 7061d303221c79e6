//! Hierarchical multiresolution Haar filtering for graphs.
//!
//! The pipeline: a signed adaptive [`encoder`] scores nodes, [`hierarchy`]
//! clusters them level by level into a Haar tree, [`basis`] turns the tree
//! into sparse orthonormal bases, and [`model`] filters features in every
//! basis and fuses the levels back onto the nodes. [`train`] fits the model,
//! [`bench`] holds the synthetic pathology experiments.

pub mod autodiff;
pub mod basis;
pub mod bench;
pub mod config;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod hierarchy;
pub mod io;
pub mod kmeans;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod run;
pub mod train;

pub use error::{HmhError, Result};
pub use graph::SparseGraph;
pub use matrix::Matrix;
