//! Minimal dense feed-forward networks with reverse-mode gradients and Adam.
//!
//! Hosts the encoder, the cos/sin predictors, the baseline heads and the probe
//! classifiers. Networks are plain values ([`ParamSet`]); gradients come from
//! recording a loss on a [`Tape`].

mod adam;
pub mod fd;
mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, OptState, DEFAULT_LR};
pub use matrix::Matrix;
pub use params::{init_dense, mlp, Activation, Dense, ParamSet};
pub use tape::{eval, grad, grad_with, Gradients, NetVars, Tape, Var};
