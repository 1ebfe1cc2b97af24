//! Minimal differentiable-computation core: parameters, dense and GRU
//! layers, dropout, initialization, L2 penalty, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod dropout;
pub mod init;
pub mod layers;
pub mod params;
pub mod regularization;
pub mod tape;

pub use adam::AdamState;
pub use dropout::dropout_mask;
pub use init::variance_scaling_init;
pub use layers::{Activation, DenseLayer, GruCell, GruMasks, Mlp};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use regularization::{add_l2_grad, l2_penalty};
pub use tape::{Gradients, NodeId, Tape};
