//! Reverse-mode automatic differentiation over small dense arrays.

mod array;
pub mod checkpoint;
mod optim;
mod tape;

pub use array::RealArray;
pub use checkpoint::{Checkpoint, ParamRecord};
pub use optim::{clip_grad_norm, OptimizerKind, OptimizerState};
pub use tape::{Gradients, NodeRef, OpKind, Tape};
