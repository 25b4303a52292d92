//! Reverse-mode differentiation over a linear tape of recorded ops.

mod params;
mod tape;

pub use params::{clip_grad_total_norm, ParamId, ParamStore, Parameter};
pub use tape::{CustomOp, Gradients, OpTiming, Tape, TraceEntry, Var};
