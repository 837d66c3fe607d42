//! Differentiable computation substrate: parameter storage, a reverse-mode
//! tape over small dense matrices, optimizers and gradient checking.

pub mod check;
mod optim;
mod params;
mod tape;

pub use optim::{sgd_step, Adam, AdamConfig};
pub use params::{Grads, Mat, ParamId, ParamStore};
pub use tape::{huber_value, Tape, Var, LAYER_NORM_EPS};
