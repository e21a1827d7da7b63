//! Minimal dense-network kernel with manual backpropagation.

mod adam;
mod checkpoint;
mod gradcheck;
mod layer;
mod matrix;
mod network;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NetworkEntry, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GRAD_CHECK_FLOOR};
pub use layer::{
    cond_batchnorm_forward, linear_backward, linear_forward, log_sigmoid, norm_backward, norm_forward, selu,
    sigmoid, update_running_stats, Activation, LayerParams, LinearGrads, Mode, NormCache, NormGrads, NormParams,
    BN_EPSILON, BN_MOMENTUM, SELU_ALPHA, SELU_LAMBDA,
};
pub use matrix::Matrix;
pub use network::{Block, BlockSpec, Forward, Gradients, Network, NormKind};

/// Runs one Adam update of `net` with `grads`.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> crate::Result<f64> {
    let mut params = net.param_slices_mut();
    state.step(&mut params, &grads.0)
}
