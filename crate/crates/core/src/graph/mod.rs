//! Granularity features and per-granularity graph construction.

mod adjacency;
mod edges;
mod features;
pub mod io;

pub use adjacency::{
    adjacency_from_edges, neighbor_mean_operator, self_attention_adjacency, Adjacency,
    ATTENTION_SLOPE,
};
pub use edges::{
    build_dna_edges, build_edges, build_ena_edges, build_tna_edges, AdjacencyVariant, Edge, EdgeSet,
};
pub use features::{extract_granular_features, frame_and_part_index, FeatureMapSequence};

use crate::autodiff::Matrix;
use crate::error::Result;

/// Node features and edges for one granularity branch.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularGraph {
    pub p: usize,
    pub node_features: Matrix,
    pub frame_index: Vec<usize>,
    pub part_index: Vec<usize>,
    pub edges: EdgeSet,
    pub adjacency: Adjacency,
}

impl GranularGraph {
    pub fn build(
        seq: &FeatureMapSequence,
        p: usize,
        variant: AdjacencyVariant,
        delta_t: usize,
        k: usize,
    ) -> Result<Self> {
        let node_features = extract_granular_features(seq, p)?;
        let (frame_index, part_index) = frame_and_part_index(seq.frames(), p);
        let edges = build_edges(
            variant,
            &node_features,
            &frame_index,
            &part_index,
            delta_t,
            k,
        )?;
        let adjacency = adjacency_from_edges(&edges, node_features.nrows())?;
        Ok(Self {
            p,
            node_features,
            frame_index,
            part_index,
            edges,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    /// In-degree of each node counting the self-loop.
    pub fn in_degrees(&self) -> Vec<usize> {
        self.adjacency
            .augmented
            .rows()
            .into_iter()
            .map(|r| r.sum() as usize)
            .collect()
    }

    pub fn neighbor_mean(&self) -> Result<Matrix> {
        neighbor_mean_operator(&self.edges, self.num_nodes())
    }
}
