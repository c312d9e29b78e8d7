//! A small deterministic engine for dense networks, together with the
//! discriminative masking gate (`DamGate`) and its analytic diagnostics.
//!
//! Everything runs in `f64`. Randomness flows through [`Rng`], a seeded
//! ChaCha8 stream, so a seed fully determines a training run.

pub mod activation;
pub mod error;
pub mod exec;
pub mod gate;
pub mod gradcheck;
pub mod init;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use activation::ActivationKind;
pub use error::{Error, Result};
pub use gate::{
    equilibrium_residual, l0_closed_form, make_ordering, regularizer, verify_gate_contract, DamGate,
    GateDiagnostics, GateFn, GateFunction, NeuronClass, Penalty, RegMode,
};
pub use gradcheck::{central_difference, finite_diff_grad, relative_error};
pub use init::{init_params, InitScheme};
pub use layer::{dense_forward, quadratic_layer_forward, Activation, Dense, L1Mask, Layer, Quadratic};
pub use loss::{argmax_rows, loss_bce, loss_frobenius, loss_mse, loss_softmax_ce, LossOutput, Reconstruction};
pub use network::{Network, Param, ParamAddress, ParamRole};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};
pub use rng::Rng;
pub use tensor::Tensor;
