//! The multi-branch network, its losses, and the training loop.

mod config;
pub mod losses;
pub mod train;

pub use config::GpnetConfig;
pub use losses::{identity_loss, triplet_loss};
pub use train::{history_csv, train, HistoryRow, PkSampler, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{GpnetError, Result};
use crate::gc::{GcKind, GcStack};
use crate::graph::{self_attention_adjacency, AdjacencyVariant, FeatureMapSequence, GranularGraph};
use crate::pooling::{readout_input, PooledGraph, Pooler, Readout};

/// Parameter-independent graph data for one branch of one sequence.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: GranularGraph,
    /// Neighbor-mean operator (spatial) or normalized adjacency (spectral).
    pub gc_propagation: Matrix,
}

/// A sequence turned into one graph per configured granularity.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub identity: u64,
    pub camera: Option<u64>,
    pub branches: Vec<PreparedGraph>,
}

impl PreparedSequence {
    pub fn new(seq: &FeatureMapSequence, config: &GpnetConfig) -> Result<Self> {
        if seq.frames() != config.frames {
            return Err(GpnetError::Contract(format!(
                "sequence has {} frames, model expects {}",
                seq.frames(),
                config.frames
            )));
        }
        let branches = config
            .granularities
            .iter()
            .map(|&p| {
                let graph =
                    GranularGraph::build(seq, p, config.adjacency, config.delta_t, config.k)?;
                let gc_propagation = match config.gc.kind {
                    GcKind::Spatial => graph.neighbor_mean()?,
                    GcKind::Spectral => graph.adjacency.normalized.clone(),
                };
                Ok(PreparedGraph {
                    graph,
                    gc_propagation,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            identity: seq.identity,
            camera: seq.camera,
            branches,
        })
    }
}

#[derive(Debug, Clone)]
struct Branch {
    p: usize,
    num_nodes: usize,
    attention: Option<ParamId>,
    gc: GcStack,
    pooler: Pooler,
    readout: Readout,
}

/// Per-sample intermediate results for one branch.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    pub p: usize,
    pub gc_output: Vec<Var>,
    pub pooled: Vec<PooledGraph>,
    pub representation: Var,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Concatenated branch representations, one row per sequence.
    pub representation: Var,
    pub logits: Var,
    pub branches: Vec<BranchTrace>,
}

#[derive(Debug, Clone)]
pub struct Gpnet {
    config: GpnetConfig,
    channels: usize,
    num_identities: usize,
    params: ParamStore,
    branches: Vec<Branch>,
    classifier: (ParamId, ParamId),
}

impl Gpnet {
    /// Builds a freshly initialized network for `channels`-wide frame features.
    pub fn new(config: GpnetConfig, channels: usize, num_identities: usize) -> Result<Self> {
        config.validate()?;
        if channels == 0 || num_identities == 0 {
            return Err(GpnetError::Config(
                "channels and identities must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut branches = Vec::with_capacity(config.granularities.len());
        let gc_out = config.gc.output_dim();
        for &p in &config.granularities {
            let prefix = format!("p{p}");
            let num_nodes = config.frames * p;
            let attention = (config.adjacency == AdjacencyVariant::SelfAttention)
                .then(|| params.glorot(format!("{prefix}.attention"), 2 * channels, 1, &mut rng));
            let gc = GcStack::init(&mut params, &prefix, channels, config.gc, &mut rng)?;
            let pooler = Pooler::init(
                &mut params,
                &prefix,
                num_nodes,
                gc_out,
                config.pool,
                &mut rng,
            )?;
            let readout = Readout::init(
                &mut params,
                &prefix,
                gc_out,
                config.branch_out_dim(p),
                &mut rng,
            );
            branches.push(Branch {
                p,
                num_nodes,
                attention,
                gc,
                pooler,
                readout,
            });
        }
        let dim = config.representation_dim();
        let classifier = (
            params.glorot("classifier.w", dim, num_identities, &mut rng),
            params.zeros("classifier.b", 1, num_identities),
        );
        Ok(Self {
            config,
            channels,
            num_identities,
            params,
            branches,
            classifier,
        })
    }

    /// Rebuilds the network and overwrites its parameters from a checkpoint.
    pub fn with_params(
        config: GpnetConfig,
        channels: usize,
        num_identities: usize,
        stored: &ParamStore,
    ) -> Result<Self> {
        let mut net = Self::new(config, channels, num_identities)?;
        if stored.len() != net.params.len() {
            return Err(GpnetError::Contract(format!(
                "checkpoint has {} parameters, model expects {}",
                stored.len(),
                net.params.len()
            )));
        }
        for (name, value) in stored.iter() {
            let id = net.params.id(name).ok_or_else(|| {
                GpnetError::Contract(format!("unexpected checkpoint parameter {name}"))
            })?;
            if net.params.get(id).dim() != value.dim() {
                return Err(GpnetError::Dimension {
                    op: "checkpoint",
                    left: net.params.get(id).dim(),
                    right: value.dim(),
                });
            }
            *net.params.get_mut(id) = value.clone();
        }
        Ok(net)
    }

    pub fn config(&self) -> &GpnetConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn prepare(&self, seq: &FeatureMapSequence) -> Result<PreparedSequence> {
        if seq.channels() != self.channels {
            return Err(GpnetError::Contract(format!(
                "sequence has {} channels, model expects {}",
                seq.channels(),
                self.channels
            )));
        }
        PreparedSequence::new(seq, &self.config)
    }

    /// Records the full forward pass for a batch of sequences.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&PreparedSequence],
    ) -> Result<ForwardOutput> {
        if batch.is_empty() {
            return Err(GpnetError::Contract("empty batch".into()));
        }
        let mut reps = Vec::with_capacity(self.branches.len());
        let mut traces = Vec::with_capacity(self.branches.len());
        for (b, branch) in self.branches.iter().enumerate() {
            let mut inputs = Vec::with_capacity(batch.len());
            let mut gc_output = Vec::with_capacity(batch.len());
            let mut pooled = Vec::with_capacity(batch.len());
            for seq in batch {
                let prepared = seq
                    .branches
                    .get(b)
                    .filter(|g| g.graph.p == branch.p && g.graph.num_nodes() == branch.num_nodes)
                    .ok_or_else(|| {
                        GpnetError::Contract(format!(
                            "sequence not prepared for branch p={}",
                            branch.p
                        ))
                    })?;
                let features = tape.constant(prepared.graph.node_features.clone());
                let (gc_prop, pool_adj) = match branch.attention {
                    Some(a) => {
                        let att = self_attention_adjacency(tape, features, bound[a])?;
                        (att, att)
                    }
                    None => {
                        let gc_prop = tape.constant(prepared.gc_propagation.clone());
                        let pool_adj = match self.config.gc.kind {
                            GcKind::Spectral => gc_prop,
                            GcKind::Spatial => {
                                tape.constant(prepared.graph.adjacency.normalized.clone())
                            }
                        };
                        (gc_prop, pool_adj)
                    }
                };
                let h = branch.gc.forward(tape, bound, features, gc_prop)?;
                let pg = branch.pooler.forward(tape, bound, h, pool_adj)?;
                inputs.push(readout_input(tape, pg.pooled)?);
                gc_output.push(h);
                pooled.push(pg);
            }
            let stacked = tape.concat_rows(&inputs)?;
            let rep = branch.readout.project(tape, bound, stacked)?;
            reps.push(rep);
            traces.push(BranchTrace {
                p: branch.p,
                gc_output,
                pooled,
                representation: rep,
            });
        }
        let representation = tape.concat_cols(&reps)?;
        let z = tape.matmul(representation, bound[self.classifier.0])?;
        let logits = tape.add(z, bound[self.classifier.1])?;
        Ok(ForwardOutput {
            representation,
            logits,
            branches: traces,
        })
    }

    /// Representation vectors for many sequences, evaluated in chunks.
    pub fn embed(&self, seqs: &[&PreparedSequence], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for part in seqs.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let fw = self.forward(&mut tape, &bound, part)?;
            out.extend(
                tape.value(fw.representation)
                    .rows()
                    .into_iter()
                    .map(|r| r.to_vec()),
            );
        }
        Ok(out)
    }
}
