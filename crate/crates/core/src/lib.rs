//! Representation learning on multiplex graphs: GCN encoders, self-supervised
//! objectives, fusion operators at every stage of the pipeline, and the
//! downstream evaluation protocol.

// index loops read more clearly than iterator chains in the numeric kernels
#![allow(clippy::needless_range_loop)]

pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod ndauto;
pub mod objective;
pub mod pipeline;

pub use error::{Error, Result};
pub use graph::{EdgeLayer, MultiplexGraph, Split};
pub use ndauto::{Adam, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};
