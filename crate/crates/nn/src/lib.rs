//! Minimal dense-tensor kernel with reverse-mode differentiation, a packed
//! bidirectional GRU, a small MLP, binary cross-entropy, and SGD/AdamW.
//!
//! Everything runs in 64-bit floats on a single thread. Callers that want
//! parallelism run independent graphs on separate workers and accumulate
//! [`Gradients`] afterwards.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod gru;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{bce_term, sigmoid, Graph, Var, PROB_CLAMP};
pub use gru::{Gru, GruCell, GruConfig, GruTrace, PackedOutput};
pub use mlp::{Activation, Dense, Dropout, Mlp};
pub use optim::{AdamW, Optimizer, Sgd};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
