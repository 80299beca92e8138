use serde::{Deserialize, Serialize};

use crate::error::{GpnetError, Result};
use crate::gc::GcStackConfig;
use crate::graph::AdjacencyVariant;
use crate::pooling::PoolConfig;

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpnetConfig {
    /// Granularity orders, one branch each, in ascending order.
    pub granularities: Vec<usize>,
    pub gc: GcStackConfig,
    pub pool: PoolConfig,
    pub adjacency: AdjacencyVariant,
    /// Temporal neighborhood radius in frames.
    pub delta_t: usize,
    /// Euclidean neighbors per node.
    pub k: usize,
    /// Frames per sequence.
    pub frames: usize,
    /// Readout width of the global (p = 1) branch.
    pub global_out_dim: usize,
    /// Readout width of every part-level branch.
    pub part_out_dim: usize,
    /// Classifier width; inferred from the training identities when absent.
    pub num_identities: Option<usize>,
    pub margin: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Identities per batch (P).
    pub batch_identities: usize,
    /// Sequences per identity in a batch (K).
    pub batch_instances: usize,
    /// Compute training rank-1 every this many epochs (0 disables it).
    pub rank1_every: usize,
    pub seed: u64,
}

impl Default for GpnetConfig {
    fn default() -> Self {
        Self {
            granularities: vec![1, 2, 4, 8],
            gc: GcStackConfig::default(),
            pool: PoolConfig::default(),
            adjacency: AdjacencyVariant::Dna,
            delta_t: 1,
            k: 2,
            frames: 8,
            global_out_dim: 2048,
            part_out_dim: 1024,
            num_identities: None,
            margin: 0.3,
            lr: 3e-4,
            weight_decay: 5e-4,
            epochs: 50,
            warmup_fraction: 0.1,
            lr_decay_every: 100,
            lr_decay_factor: 0.1,
            batch_identities: 8,
            batch_instances: 4,
            rank1_every: 1,
            seed: 0,
        }
    }
}

impl GpnetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GpnetError::Config(m));
        if self.granularities.is_empty() {
            return bad("granularities must not be empty".into());
        }
        if self.granularities.windows(2).any(|w| w[0] >= w[1]) || self.granularities[0] == 0 {
            return bad(format!(
                "granularities must be positive and strictly ascending, got {:?}",
                self.granularities
            ));
        }
        self.gc.validate()?;
        self.pool.validate()?;
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        let smallest = self.frames * self.granularities[0];
        if !matches!(
            self.adjacency,
            AdjacencyVariant::Tna | AdjacencyVariant::SelfAttention
        ) && self.k >= smallest
        {
            return bad(format!(
                "k = {} must be smaller than the smallest graph ({smallest} nodes)",
                self.k
            ));
        }
        if self.global_out_dim == 0 || self.part_out_dim == 0 {
            return bad("readout widths must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.weight_decay < 0.0 || self.margin < 0.0 {
            return bad("weight_decay and margin must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)".into());
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor > 0.0) {
            return bad("lr decay settings must be positive".into());
        }
        if self.batch_identities < 2 || self.batch_instances < 2 {
            return bad("batches need P >= 2 identities and K >= 2 sequences".into());
        }
        if self.num_identities == Some(0) {
            return bad("num_identities must be positive".into());
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.batch_identities * self.batch_instances
    }

    pub fn branch_out_dim(&self, p: usize) -> usize {
        if p == 1 {
            self.global_out_dim
        } else {
            self.part_out_dim
        }
    }

    /// Length of the concatenated representation.
    pub fn representation_dim(&self) -> usize {
        self.granularities
            .iter()
            .map(|&p| self.branch_out_dim(p))
            .sum()
    }

    pub fn warmup_epochs(&self) -> usize {
        (self.warmup_fraction * self.epochs as f64).round() as usize
    }

    /// Linear warm-up, then step decay by `lr_decay_factor` every `lr_decay_every` epochs.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let warm = self.warmup_epochs();
        if epoch < warm {
            return self.lr * (epoch + 1) as f64 / (warm + 1) as f64;
        }
        self.lr
            * self
                .lr_decay_factor
                .powi((epoch / self.lr_decay_every) as i32)
    }
}
