//! Minimal dense-tensor numerics: recorded-tape reverse-mode differentiation,
//! a GRU cell, parameter initialization, Adam and gradient clipping.

mod gru;
mod params;
mod tape;
mod tensor;

pub use gru::{gru_cell, GruCtxWeights, GruWeights};
pub use params::{Binding, ParamSpec, ParamStore, INIT_RANGE};
pub use tape::{Grads, NodeId, Tape};
pub use tensor::{softmax, NnError, Tensor};
