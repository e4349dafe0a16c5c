//! Minimal reverse-mode autodiff engine and layer library.
//!
//! All models in this crate are expressed as graphs over `f64` matrices.
//! The engine is deliberately small, single-threaded and deterministic:
//! with fixed seeds, training produces bit-identical parameters across
//! runs, which the command-line determinism guarantee relies on.

mod adam;
mod graph;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{Conv2dSpec, Grads, Graph, NodeId};
pub use layers::{
    xavier, Bidirectional, Conv1d, Conv2d, GruCell, Highway, Linear, LstmCell, RecurrentCell,
};
pub use params::{Binding, ParamId, ParamStore};
