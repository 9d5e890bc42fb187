//! Densely-connected convolutional feature extractor with reverse-mode
//! gradients, an Adam optimizer and a binary checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint,
    Checkpoint, CHECKPOINT_VERSION,
};
pub use layers::{BatchNorm, Conv2d, Mode, BN_EPS};
pub use network::{
    dense_layer_forward, network_backward, network_forward, plain_layer, residual_layer,
    transition_forward, ActivationTape, DenseLayer, NetworkConfig, NetworkParams, TensorSlot,
    Transition,
};
pub use tensor::Tensor4;

/// Momentum of the normalization running averages.
pub const BN_MOMENTUM: f64 = 0.1;
