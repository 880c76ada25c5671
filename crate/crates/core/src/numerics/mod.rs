//! Dense-tensor math with reverse-mode differentiation, AdamW, the
//! warmup+cosine schedule, and binary parameter checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId, OpKind};
pub use optim::{AdamWConfig, LrSchedule, OptimState, ParamStore};
pub use tensor::{DType, Tensor};
