//! Dense and 1-D convolutional layers with hand-chained backpropagation.
//!
//! Activations are row-major tensors with a leading batch axis:
//! `[batch, length, channels]` for sequence layers and `[batch, features]`
//! after [`Layer::Flatten`].

mod adam;
mod float;
mod layers;
mod loss;
mod network;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use float::Float;
pub use layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward,
    flatten_backward, flatten_forward, maxpool1d_backward, maxpool1d_forward, relu_backward, relu_forward, Cache,
    Conv1d, Dense, Layer, LayerSpec,
};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_batch};
pub use network::{ArchRow, Network, MANIFEST_FILE, WEIGHTS_FILE};
pub use tensor::Tensor;
