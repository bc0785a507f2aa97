//! Minimal dense-array engine with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! replays the tape in reverse. Trainable tensors live in a [`ParamStore`] and
//! are bound onto a fresh graph for each forward pass. [`adam_step`] applies a
//! bias-corrected Adam update to a store.

mod adam;
mod array;
mod error;
mod graph;
mod kernels;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::{Array, Real};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{Bound, ParamId, ParamStore};
