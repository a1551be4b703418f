//! Minimal dense-tensor autodiff used by every trainable component.

mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradientSample, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use layers::{dropout, BiLstm, Conv1d, Dense, Lstm};
pub use optim::Adam;
pub use params::{Bound, ParamId, Params};
pub use tensor::Tensor;
