//! Dense tensors, reverse-mode differentiation, and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Backward, Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

use crate::error::Result;

/// Activation applied by a network layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// `W x + b` for a single vector or a row-stacked batch.
pub fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    g.linear(x, w, Some(b))
}
