//! Minimal neural-network toolkit: tensors, a reverse-mode tape, layers and Adam.

mod graph;
mod layers;
mod optim;
mod tensor;

pub use graph::{sigmoid, softmax_rows, Grads, Graph, Var};
pub use layers::{Bound, ConvLayerSpec, ConvNet, ConvNetSpec, Mlp, MlpSpec, ParamSet, RecurrentSpec};
pub use optim::Adam;
pub use tensor::Tensor;
