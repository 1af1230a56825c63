//! The matrix-product equivariant model and its mean-field baseline.

mod checkpoint;
mod config;
mod forward;
mod graph;
pub mod ops;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use config::{KernelMode, ModelConfig, ScalarMode, Variant, EDGE_FEATURES, EDGE_SCALARS, NODE_INPUTS};
pub use forward::{tape_loss, BatchGrad, LayerTrace, Model, NodeState, Trace, DEGENERATE_EDGES};
pub use graph::Graph;
pub use params::{baseline_hidden, Bound, Params};
