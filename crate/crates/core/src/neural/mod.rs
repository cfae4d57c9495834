//! Dense and convolutional networks with reverse-mode gradients and Adam.

mod network;
mod spec;
mod train;

pub use network::Network;
pub use spec::{
    param_count, sweep_specs, Activation, Family, FieldShape, LayerSpec, NetworkSpec, Shape, DEFAULT_KERNEL,
};
pub use train::{adam_step, train, AdamState, EpochRecord, Normalizer, TrainConfig, TrainedNetwork};
