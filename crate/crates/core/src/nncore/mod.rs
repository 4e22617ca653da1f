//! Small differentiable numeric core: row-major matrices, a reverse-mode
//! tape, recurrent and set layers, Adam and parameter files.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::Checkpoint;
pub use layers::{dense_forward, lstm_cell, set2set, LstmVars};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use scalar::{canonical_sum, Scalar};
pub use tape::{masked_softmax, Gradients, ParamVars, Tape, Var};
pub use tensor::Tensor;
