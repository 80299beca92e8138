use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{GpnetError, Result};

use super::edges::EdgeSet;

/// Binary adjacency, its self-looped form, and the symmetric normalization used
/// by spectral convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    /// `binary[i][j] == 1` iff `j → i`.
    pub binary: Matrix,
    /// `binary + I`.
    pub augmented: Matrix,
    /// `D^-1/2 (A + I) D^-1/2` with `D_ii = Σ_j (A + I)_ij`.
    pub normalized: Matrix,
}

pub fn adjacency_from_edges(edges: &EdgeSet, n: usize) -> Result<Adjacency> {
    let mut binary = Matrix::zeros((n, n));
    for e in edges {
        if e.src >= n || e.dst >= n {
            return Err(GpnetError::Contract(format!(
                "edge {} -> {} out of range for {n} nodes",
                e.src, e.dst
            )));
        }
        binary[[e.dst, e.src]] = 1.0;
    }
    let augmented = &binary + &Matrix::eye(n);
    let inv_sqrt: Vec<f64> = augmented
        .rows()
        .into_iter()
        .map(|r| 1.0 / r.sum().sqrt())
        .collect();
    let normalized = Matrix::from_shape_fn((n, n), |(i, j)| {
        inv_sqrt[i] * augmented[[i, j]] * inv_sqrt[j]
    });
    Ok(Adjacency {
        binary,
        augmented,
        normalized,
    })
}

/// Row `i` averages the in-neighbors of node `i` (self excluded); rows of
/// isolated nodes are zero.
pub fn neighbor_mean_operator(edges: &EdgeSet, n: usize) -> Result<Matrix> {
    let adj = adjacency_from_edges(edges, n)?;
    let mut m = adj.binary;
    for mut row in m.rows_mut() {
        let deg = row.sum();
        if deg > 0.0 {
            row.mapv_inplace(|v| v / deg);
        }
    }
    Ok(m)
}

/// Slope of the LeakyReLU inside the attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Dense row-stochastic adjacency `A_ij = softmax_j(LeakyReLU(a · [f_i || f_j]))`
/// where `attention` is a `2d×1` vector.
pub fn self_attention_adjacency(tape: &mut Tape, features: Var, attention: Var) -> Result<Var> {
    let (_, d) = tape.shape(features);
    if tape.shape(attention) != (2 * d, 1) {
        return Err(GpnetError::Dimension {
            op: "self_attention_adjacency",
            left: tape.shape(features),
            right: tape.shape(attention),
        });
    }
    let top: Vec<usize> = (0..d).collect();
    let bottom: Vec<usize> = (d..2 * d).collect();
    let a_src = tape.select_rows(attention, &top)?;
    let a_dst = tape.select_rows(attention, &bottom)?;
    let left = tape.matmul(features, a_src)?;
    let right = tape.matmul(features, a_dst)?;
    let logits = tape.pairwise_sum(left, right)?;
    let act = tape.leaky_relu(logits, ATTENTION_SLOPE);
    Ok(tape.softmax_rows(act))
}
