//! Numeric substrate for the nerxfer models: dense `f64` tensors, a
//! reverse-mode tape, a parameter store split into `base`/`adapt` learning
//! rate groups, Adam, and the binary checkpoint container.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use graph::{Axis, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{GroupKind, ParamId, ParamStore, ParameterGroup};
pub use tensor::Tensor;
