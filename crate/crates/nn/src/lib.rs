//! Minimal reverse-mode automatic differentiation over small dense
//! matrices, plus the recurrent cells the repair models are built from:
//! a GRU cell, a Child-Sum Tree-LSTM cell, global dot-product attention,
//! a shape-preserving tree encoder-decoder and cycle training.
//!
//! Models train in `f32`; every op is generic over [`Scalar`] so the same
//! code runs in `f64` for finite-difference gradient checks.

pub mod cells;
pub mod cycle;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;
pub mod tree;

pub use cells::{
    dot_attention, mean_context, ChildSumTreeLstmCell, GruCell, Linear, Mlp, NodeState,
};
pub use cycle::{CycleConfig, CycleModel, CycleOptimizer, CycleSample, LossValues, LossVars};
pub use error::NnError;
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use params::{Adam, AdamConfig, ParamGrads, ParamId, ParamStore};
pub use tensor::{Scalar, Shape, Tensor};
pub use tree::{encode_tree, TreeMapper, TreeMapperConfig, TreeShape};
