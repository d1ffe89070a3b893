//! Dense CPU arrays with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar sweeps the tape in reverse and returns
//! the gradients of its leaves. Convolutions lower to GEMM through
//! `matrixmultiply`; per-sample work is spread over rayon when the
//! `parallel` feature is on (see [`par`]).

mod array;
pub mod gradcheck;
mod graph;
mod ops;
pub mod par;
mod scalar;

pub use array::{broadcast_shape, Array};
pub use graph::{BackwardCtx, Grads, Graph, Var};
pub use ops::norm::BatchStats;
pub use ops::shape::concat;
pub use scalar::{gemm, MatRef, Real};
