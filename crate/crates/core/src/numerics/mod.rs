//! Dense matrices, layer primitives with explicit backward passes, Adam, and
//! a finite-difference gradient oracle.

mod adam;
mod gradcheck;
mod layers;
mod matrix;
pub mod meter;
mod rng;

pub use adam::{adam_step, AdamHyper, Param};
pub use gradcheck::{finite_difference_gradient, DEFAULT_STEP};
pub use layers::{
    batchnorm_apply, batchnorm_backward, batchnorm_forward, relu_backward, relu_forward,
    softmax2, weighted_softmax_xent, BatchStats, BnCache, Mode, NormPass, RunningStats, BN_EPS,
    BN_MOMENTUM,
};
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use rng::RngState;
