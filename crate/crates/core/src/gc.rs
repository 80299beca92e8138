//! Spatial (neighbor-mean) and spectral (normalized adjacency) graph convolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::error::{GpnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcKind {
    Spatial,
    Spectral,
}

impl GcKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spatial => "spatial",
            Self::Spectral => "spectral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcStackConfig {
    pub kind: GcKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub spectral_shortcut_out_dim: usize,
}

impl Default for GcStackConfig {
    fn default() -> Self {
        Self {
            kind: GcKind::Spatial,
            num_layers: 2,
            hidden_dim: 256,
            spectral_shortcut_out_dim: 256,
        }
    }
}

impl GcStackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(GpnetError::Config(
                "gc.num_layers must be at least 1".into(),
            ));
        }
        if self.hidden_dim < 2 || self.spectral_shortcut_out_dim == 0 {
            return Err(GpnetError::Config(
                "gc widths must be positive (hidden_dim >= 2)".into(),
            ));
        }
        Ok(())
    }

    /// Width of `H^(GC)`.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            GcKind::Spatial => self.hidden_dim,
            GcKind::Spectral => self.spectral_shortcut_out_dim,
        }
    }
}

/// `σ(H W_self || N H W_neigh)` where `N` averages in-neighbors.
pub fn spatial_layer(
    tape: &mut Tape,
    h: Var,
    neighbor_mean: Var,
    w_self: Var,
    w_neigh: Var,
) -> Result<Var> {
    let own = tape.matmul(h, w_self)?;
    let agg = tape.matmul(neighbor_mean, h)?;
    let neigh = tape.matmul(agg, w_neigh)?;
    let cat = tape.concat_cols(&[own, neigh])?;
    Ok(tape.relu(cat))
}

/// `σ(Â H W)` with `Â` the normalized self-looped adjacency.
pub fn spectral_layer(tape: &mut Tape, h: Var, normalized: Var, w: Var) -> Result<Var> {
    let prop = tape.matmul(normalized, h)?;
    let out = tape.matmul(prop, w)?;
    Ok(tape.relu(out))
}

#[derive(Debug, Clone)]
enum LayerParams {
    Spatial { w_self: ParamId, w_neigh: ParamId },
    Spectral { w: ParamId },
}

/// Parameters of one branch's convolution stack.
#[derive(Debug, Clone)]
pub struct GcStack {
    config: GcStackConfig,
    layers: Vec<LayerParams>,
    shortcut: Option<(ParamId, ParamId)>,
}

impl GcStack {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        config: GcStackConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let hidden = config.hidden_dim;
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut d = in_dim;
        for l in 0..config.num_layers {
            let layer = match config.kind {
                GcKind::Spatial => {
                    let half = hidden / 2;
                    LayerParams::Spatial {
                        w_self: store.glorot(format!("{prefix}.gc{l}.w_self"), d, half, rng),
                        w_neigh: store.glorot(
                            format!("{prefix}.gc{l}.w_neigh"),
                            d,
                            hidden - half,
                            rng,
                        ),
                    }
                }
                GcKind::Spectral => LayerParams::Spectral {
                    w: store.glorot(format!("{prefix}.gc{l}.w"), d, hidden, rng),
                },
            };
            layers.push(layer);
            d = hidden;
        }
        let shortcut = match config.kind {
            GcKind::Spatial => None,
            GcKind::Spectral => {
                let out = config.spectral_shortcut_out_dim;
                Some((
                    store.glorot(
                        format!("{prefix}.gc_shortcut.w"),
                        config.num_layers * hidden,
                        out,
                        rng,
                    ),
                    store.zeros(format!("{prefix}.gc_shortcut.b"), 1, out),
                ))
            }
        };
        Ok(Self {
            config,
            layers,
            shortcut,
        })
    }

    pub fn config(&self) -> &GcStackConfig {
        &self.config
    }

    /// Runs every layer and returns `H^(GC)`.
    ///
    /// `propagation` is the neighbor-mean operator for the spatial kind and the
    /// normalized adjacency for the spectral kind.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        features: Var,
        propagation: Var,
    ) -> Result<Var> {
        Ok(self.forward_layers(tape, bound, features, propagation)?.0)
    }

    /// Like [`GcStack::forward`] but also returns every layer's output.
    pub fn forward_layers(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        features: Var,
        propagation: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let mut h = features;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = match layer {
                LayerParams::Spatial { w_self, w_neigh } => {
                    spatial_layer(tape, h, propagation, bound[*w_self], bound[*w_neigh])?
                }
                LayerParams::Spectral { w } => spectral_layer(tape, h, propagation, bound[*w])?,
            };
            outputs.push(h);
        }
        let out = match self.shortcut {
            None => h,
            Some((w, b)) => {
                let cat = tape.concat_cols(&outputs)?;
                let proj = tape.matmul(cat, bound[w])?;
                tape.add(proj, bound[b])?
            }
        };
        Ok((out, outputs))
    }
}
