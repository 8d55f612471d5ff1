//! Min-aggregation graph neural networks that learn Bellman-Ford steps.

pub mod certificate;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
pub use graph::{AttributedGraph, Edge, NeighborView, NodeId};
