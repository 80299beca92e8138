//! Graph pooling (DiffPool, SAGPool, multi-head full attention) and readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{GpnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMethod {
    Mean,
    Max,
    Diffpool,
    Sagpool,
    Mhfapool,
}

impl PoolMethod {
    pub const ALL: [PoolMethod; 5] = [
        PoolMethod::Mean,
        PoolMethod::Max,
        PoolMethod::Diffpool,
        PoolMethod::Sagpool,
        PoolMethod::Mhfapool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Max => "max",
            Self::Diffpool => "diffpool",
            Self::Sagpool => "sagpool",
            Self::Mhfapool => "mhfapool",
        }
    }

    pub fn is_graph_pooling(self) -> bool {
        !matches!(self, Self::Mean | Self::Max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub method: PoolMethod,
    pub keep_ratio: f64,
    pub power_iter_max: usize,
    pub power_iter_tol: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            method: PoolMethod::Mhfapool,
            keep_ratio: 0.25,
            power_iter_max: 5,
            power_iter_tol: 1e-6,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(GpnetError::Config(format!(
                "pool.keep_ratio must lie in (0, 1], got {}",
                self.keep_ratio
            )));
        }
        if self.power_iter_max == 0 || !(self.power_iter_tol >= 0.0) {
            return Err(GpnetError::Config(
                "power iteration settings must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Pooled node count for an `n`-node graph.
    pub fn pooled_count(&self, n: usize) -> usize {
        match self.method {
            PoolMethod::Mean | PoolMethod::Max => 1,
            _ => ((self.keep_ratio * n as f64).round() as usize).max(1),
        }
    }
}

/// How the pooled nodes were formed.
#[derive(Debug, Clone)]
pub enum Provenance {
    Mean,
    Max,
    /// Soft assignment `S` (n×m).
    Diffpool {
        assignment: Var,
    },
    /// Node scores `Z` (n×1) and the kept nodes ordered by (score desc, index asc).
    Sagpool {
        scores: Var,
        retained: Vec<usize>,
    },
    /// Per head: attention row (1×n), eigenvector estimate (n×1) when one exists,
    /// and the number of power iterations executed.
    Mhfapool {
        heads: Vec<HeadTrace>,
    },
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub weights: Var,
    pub eigenvector: Option<Var>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct PooledGraph {
    /// `H^(P)`, m×d.
    pub pooled: Var,
    pub provenance: Provenance,
}

impl PooledGraph {
    /// One importance value per input node, for inspection.
    pub fn node_scores(&self, tape: &Tape, n: usize) -> Vec<f64> {
        match &self.provenance {
            Provenance::Mean => vec![1.0 / n as f64; n],
            Provenance::Max => vec![f64::NAN; n],
            Provenance::Diffpool { assignment } => tape
                .value(*assignment)
                .rows()
                .into_iter()
                .map(|r| r.iter().cloned().fold(0.0, f64::max))
                .collect(),
            Provenance::Sagpool { scores, .. } => tape.value(*scores).column(0).to_vec(),
            Provenance::Mhfapool { heads } => {
                let mut acc = vec![0.0; n];
                for h in heads {
                    for (a, w) in acc.iter_mut().zip(tape.value(h.weights).row(0)) {
                        *a += w;
                    }
                }
                acc.iter().map(|v| v / heads.len() as f64).collect()
            }
        }
    }
}

pub fn mean_pool(tape: &mut Tape, h: Var) -> Var {
    tape.mean_rows(h)
}

pub fn max_pool(tape: &mut Tape, h: Var) -> Var {
    tape.max_rows(h)
}

fn check_m(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(GpnetError::Config(format!(
            "cannot pool {n} nodes into {m}"
        )));
    }
    Ok(())
}

/// `S = softmax_rows(Â H W)`, `H^(P) = Sᵀ H`.
pub fn diffpool(
    tape: &mut Tape,
    h: Var,
    normalized_adj: Var,
    w_pool: Var,
    m: usize,
) -> Result<PooledGraph> {
    check_m(m, tape.shape(h).0)?;
    if tape.shape(w_pool).1 != m {
        return Err(GpnetError::Dimension {
            op: "diffpool",
            left: tape.shape(w_pool),
            right: (tape.shape(h).1, m),
        });
    }
    let prop = tape.matmul(normalized_adj, h)?;
    let logits = tape.matmul(prop, w_pool)?;
    let assignment = tape.softmax_rows(logits);
    let st = tape.transpose(assignment);
    let pooled = tape.matmul(st, h)?;
    Ok(PooledGraph {
        pooled,
        provenance: Provenance::Diffpool { assignment },
    })
}

/// Indices of the `m` highest scores ordered by (score desc, index asc).
pub fn top_m(scores: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Scores `Z = softmax over nodes of (Â H w)`; keeps the top-m nodes, gated by score.
/// Pooled rows follow ascending node index.
pub fn sagpool(
    tape: &mut Tape,
    h: Var,
    normalized_adj: Var,
    w_score: Var,
    m: usize,
) -> Result<PooledGraph> {
    check_m(m, tape.shape(h).0)?;
    let prop = tape.matmul(normalized_adj, h)?;
    let raw = tape.matmul(prop, w_score)?;
    if tape.shape(raw).1 != 1 {
        return Err(GpnetError::Dimension {
            op: "sagpool",
            left: tape.shape(w_score),
            right: (tape.shape(h).1, 1),
        });
    }
    let row = tape.transpose(raw);
    let soft = tape.softmax_rows(row);
    let scores = tape.transpose(soft);
    let retained = top_m(
        tape.value(scores)
            .column(0)
            .as_slice()
            .expect("contiguous column"),
        m,
    );
    let mut rows = retained.clone();
    rows.sort_unstable();
    let kept = tape.select_rows(h, &rows)?;
    let gate = tape.select_rows(scores, &rows)?;
    let pooled = tape.mul_col(kept, gate)?;
    Ok(PooledGraph {
        pooled,
        provenance: Provenance::Sagpool { scores, retained },
    })
}

/// Result of running power iteration on a recorded matrix.
#[derive(Debug, Clone, Copy)]
pub struct PowerIteration {
    /// Unit-norm estimate of the dominant eigenvector, `None` when `C ξ₀ = 0`.
    pub vector: Option<Var>,
    pub iterations: usize,
    pub converged: bool,
}

/// Repeats `ξ ← Cξ / ‖Cξ‖` from the uniform unit vector until successive iterates
/// differ by less than `tol` or `max_iter` steps have run. Every executed step
/// is recorded on the tape.
pub fn power_iteration(
    tape: &mut Tape,
    c: Var,
    max_iter: usize,
    tol: f64,
) -> Result<PowerIteration> {
    let (n, cols) = tape.shape(c);
    if n != cols {
        return Err(GpnetError::Dimension {
            op: "power_iteration",
            left: (n, cols),
            right: (n, n),
        });
    }
    let mut xi = tape.constant(Matrix::from_elem((n, 1), 1.0 / (n as f64).sqrt()));
    let mut out = PowerIteration {
        vector: None,
        iterations: 0,
        converged: false,
    };
    for it in 0..max_iter {
        let y = tape.matmul(c, xi)?;
        let norm = tape.l2_norm(y);
        if tape.value(norm)[[0, 0]] == 0.0 {
            // Nilpotent direction: keep the last non-zero iterate, if any.
            break;
        }
        let next = tape.div_scalar(y, norm)?;
        let change = (tape.value(next) - tape.value(xi))
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        xi = next;
        out.vector = Some(xi);
        out.iterations = it + 1;
        if change < tol {
            out.converged = true;
            break;
        }
    }
    Ok(out)
}

/// Full attention matrix `C_ij = ReLU(w · [h_i || h_j])` for one head (`w` is 2d×1).
pub fn attention_matrix(tape: &mut Tape, h: Var, head: Var) -> Result<Var> {
    let d = tape.shape(h).1;
    if tape.shape(head) != (2 * d, 1) {
        return Err(GpnetError::Dimension {
            op: "mhfapool head",
            left: tape.shape(head),
            right: (2 * d, 1),
        });
    }
    let top: Vec<usize> = (0..d).collect();
    let bottom: Vec<usize> = (d..2 * d).collect();
    let w_i = tape.select_rows(head, &top)?;
    let w_j = tape.select_rows(head, &bottom)?;
    let a = tape.matmul(h, w_i)?;
    let b = tape.matmul(h, w_j)?;
    let pre = tape.pairwise_sum(a, b)?;
    Ok(tape.relu(pre))
}

/// One pooled node per head: `softmax(ξᵀ) H` with `ξ` the dominant eigenvector of
/// the head's attention matrix. A head whose matrix annihilates the start vector
/// falls back to uniform weights.
pub fn mhfapool(
    tape: &mut Tape,
    h: Var,
    heads: &[Var],
    max_iter: usize,
    tol: f64,
) -> Result<PooledGraph> {
    let n = tape.shape(h).0;
    if heads.is_empty() {
        return Err(GpnetError::Config(
            "mhfapool needs at least one head".into(),
        ));
    }
    let mut rows = Vec::with_capacity(heads.len());
    let mut traces = Vec::with_capacity(heads.len());
    for &head in heads {
        let c = attention_matrix(tape, h, head)?;
        let pi = power_iteration(tape, c, max_iter, tol)?;
        let weights = match pi.vector {
            Some(xi) => {
                let row = tape.transpose(xi);
                tape.softmax_rows(row)
            }
            None => tape.constant(Matrix::from_elem((1, n), 1.0 / n as f64)),
        };
        rows.push(tape.matmul(weights, h)?);
        traces.push(HeadTrace {
            weights,
            eigenvector: pi.vector,
            iterations: pi.iterations,
            converged: pi.converged,
        });
    }
    let pooled = tape.concat_rows(&rows)?;
    Ok(PooledGraph {
        pooled,
        provenance: Provenance::Mhfapool { heads: traces },
    })
}

#[derive(Debug, Clone)]
enum PoolParams {
    None,
    Diffpool(ParamId),
    Sagpool(ParamId),
    Mhfapool(Vec<ParamId>),
}

/// Pooling layer parameters for one branch with a fixed node count.
#[derive(Debug, Clone)]
pub struct Pooler {
    config: PoolConfig,
    pooled_nodes: usize,
    params: PoolParams,
}

impl Pooler {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        num_nodes: usize,
        in_dim: usize,
        config: PoolConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let m = config.pooled_count(num_nodes);
        check_m(m, num_nodes)?;
        let params = match config.method {
            PoolMethod::Mean | PoolMethod::Max => PoolParams::None,
            PoolMethod::Diffpool => {
                PoolParams::Diffpool(store.glorot(format!("{prefix}.diffpool.w"), in_dim, m, rng))
            }
            PoolMethod::Sagpool => {
                PoolParams::Sagpool(store.glorot(format!("{prefix}.sagpool.w"), in_dim, 1, rng))
            }
            PoolMethod::Mhfapool => PoolParams::Mhfapool(
                (0..m)
                    .map(|k| store.glorot(format!("{prefix}.mhfa.head{k}"), 2 * in_dim, 1, rng))
                    .collect(),
            ),
        };
        Ok(Self {
            config,
            pooled_nodes: m,
            params,
        })
    }

    pub fn pooled_nodes(&self) -> usize {
        self.pooled_nodes
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h: Var,
        normalized_adj: Var,
    ) -> Result<PooledGraph> {
        let m = self.pooled_nodes;
        match (&self.params, self.config.method) {
            (PoolParams::None, PoolMethod::Mean) => Ok(PooledGraph {
                pooled: mean_pool(tape, h),
                provenance: Provenance::Mean,
            }),
            (PoolParams::None, _) => Ok(PooledGraph {
                pooled: max_pool(tape, h),
                provenance: Provenance::Max,
            }),
            (PoolParams::Diffpool(w), _) => diffpool(tape, h, normalized_adj, bound[*w], m),
            (PoolParams::Sagpool(w), _) => sagpool(tape, h, normalized_adj, bound[*w], m),
            (PoolParams::Mhfapool(ws), _) => {
                let heads: Vec<Var> = ws.iter().map(|w| bound[*w]).collect();
                mhfapool(
                    tape,
                    h,
                    &heads,
                    self.config.power_iter_max,
                    self.config.power_iter_tol,
                )
            }
        }
    }
}

/// `mean_rows(H^(P)) || max_rows(H^(P))`, the input of the readout projection.
pub fn readout_input(tape: &mut Tape, pooled: Var) -> Result<Var> {
    let mean = tape.mean_rows(pooled);
    let max = tape.max_rows(pooled);
    tape.concat_cols(&[mean, max])
}

/// Fully connected readout projection `2d → out`.
#[derive(Debug, Clone)]
pub struct Readout {
    w: ParamId,
    b: ParamId,
}

impl Readout {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.glorot(format!("{prefix}.readout.w"), 2 * in_dim, out_dim, rng),
            b: store.zeros(format!("{prefix}.readout.b"), 1, out_dim),
        }
    }

    /// Projects stacked readout inputs (one row per graph).
    pub fn project(&self, tape: &mut Tape, bound: &Bound, inputs: Var) -> Result<Var> {
        let z = tape.matmul(inputs, bound[self.w])?;
        tape.add(z, bound[self.b])
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, pooled: Var) -> Result<Var> {
        let x = readout_input(tape, pooled)?;
        self.project(tape, bound, x)
    }
}
