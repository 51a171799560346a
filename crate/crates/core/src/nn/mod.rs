//! Policy/value network: layers, the network itself, optimizer and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod optim;

pub use checkpoint::{load_params, save_params, Checkpoint};
pub use layers::Scalar;
pub use network::{
    sample_action, ConvSpec, ForwardCache, Gradients, NetSpec, Objective, OutputGrad, PolicyNet, PolicyOutput,
    SampledAction,
};
pub use optim::Adam;
