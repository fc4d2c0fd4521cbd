//! Quantized graph IR: export from an integer model, canonical JSON,
//! validation, normalization passes and a reference interpreter.

mod eval;
mod export;
mod graph;
mod passes;
mod shape;

pub use eval::{evaluate, run_node};
pub use export::{export_graph, run_graph, INPUT, LOGITS, PROBS, Q_LOGITS};
pub use graph::{ElemKind, IrGraph, IrNode, Op, QuantAttrs, Rounding, Tensor, TensorData, TensorInfo, IR_VERSION};
pub use passes::{fold_constants, merge_scales_relu, optimize, PassStat};
pub use shape::{diagnostics, infer_shapes, validate};
