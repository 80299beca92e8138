//! Dense-matrix reverse-mode differentiation, parameters, and optimizer.

mod optim;
mod params;
mod tape;

pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub(crate) use tape::row_distance;
pub use tape::{Matrix, Tape, Value, Var};
