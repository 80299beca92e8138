use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{row_distance, Matrix};
use crate::error::{GpnetError, Result};

/// Directed edge `src → dst`; messages flow from `src` into `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

impl Edge {
    pub fn new(src: usize, dst: usize) -> Self {
        Self { src, dst }
    }
}

pub type EdgeSet = BTreeSet<Edge>;

/// Which neighborhoods contribute edges to a granularity graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyVariant {
    /// Temporal and Euclidean neighbors.
    Dna,
    /// Temporal neighbors only.
    Tna,
    /// Euclidean (kNN) neighbors only.
    Ena,
    /// Dense learned attention over all node pairs.
    SelfAttention,
}

impl AdjacencyVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dna => "dna",
            Self::Tna => "tna",
            Self::Ena => "ena",
            Self::SelfAttention => "self_attention",
        }
    }
}

/// Same part, frame distance in `1..=delta_t`.
pub fn build_tna_edges(
    frame_index: &[usize],
    part_index: &[usize],
    delta_t: usize,
) -> Result<EdgeSet> {
    if frame_index.len() != part_index.len() {
        return Err(GpnetError::Contract(
            "frame and part index lengths differ".into(),
        ));
    }
    let n = frame_index.len();
    let mut edges = EdgeSet::new();
    for i in 0..n {
        for j in 0..n {
            let gap = frame_index[i].abs_diff(frame_index[j]);
            if part_index[i] == part_index[j] && gap > 0 && gap <= delta_t {
                edges.insert(Edge::new(j, i));
            }
        }
    }
    Ok(edges)
}

/// `j → i` for each of the `k` nearest other nodes `j` of node `i`.
/// Distance ties go to the lower index.
pub fn build_ena_edges(features: &Matrix, k: usize) -> Result<EdgeSet> {
    let n = features.nrows();
    if k >= n {
        return Err(GpnetError::Config(format!(
            "k = {k} must be smaller than node count {n}"
        )));
    }
    let mut edges = EdgeSet::new();
    if k == 0 {
        return Ok(edges);
    }
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (row_distance(features, i, j), j)),
        );
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            edges.insert(Edge::new(j, i));
        }
    }
    Ok(edges)
}

/// Dual-neighborhood edges: the union of temporal and Euclidean neighbors.
pub fn build_dna_edges(
    features: &Matrix,
    frame_index: &[usize],
    part_index: &[usize],
    delta_t: usize,
    k: usize,
) -> Result<EdgeSet> {
    if features.nrows() != frame_index.len() {
        return Err(GpnetError::Contract(
            "feature rows and index lengths differ".into(),
        ));
    }
    let mut edges = build_ena_edges(features, k)?;
    edges.extend(build_tna_edges(frame_index, part_index, delta_t)?);
    Ok(edges)
}

pub fn build_edges(
    variant: AdjacencyVariant,
    features: &Matrix,
    frame_index: &[usize],
    part_index: &[usize],
    delta_t: usize,
    k: usize,
) -> Result<EdgeSet> {
    match variant {
        AdjacencyVariant::Dna => build_dna_edges(features, frame_index, part_index, delta_t, k),
        AdjacencyVariant::Tna => build_tna_edges(frame_index, part_index, delta_t),
        AdjacencyVariant::Ena => build_ena_edges(features, k),
        AdjacencyVariant::SelfAttention => Ok(EdgeSet::new()),
    }
}
