//! Community detection for attributed networks.
//!
//! The pipeline combines a topology-driven target (the best of several
//! Leiden runs) with a label-driven target (human labels split into
//! connected sub-communities), trains a three-layer GCN so that embedding
//! inner products match both co-membership matrices, and clusters the
//! final embedding with a BIRCH CF-tree.

pub mod birch;
pub mod data_io;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod leiden;
pub mod loss;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod refine;
pub mod seed;

pub use error::{Error, Result};
pub use graph::{AttributeMatrix, Graph, Partition};
