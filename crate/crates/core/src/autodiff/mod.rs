//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every primitive it
//! executes. [`Graph::backward`] walks the record in reverse and returns
//! [`Gradients`] keyed by parameter. Graphs built with [`Graph::inference`]
//! compute the same values without keeping anything needed for backward.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Graph, Var, PROB_FLOOR};
pub use params::{GradSlot, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
