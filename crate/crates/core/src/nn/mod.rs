//! Dense-network substrate: matrices, flat parameters, reverse-mode
//! differentiation and SGD with momentum.

pub mod checkpoint;
pub mod dense;
pub mod matrix;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{decode_params, encode_params, load_params, save_params};
pub use dense::{Activation, DenseNet};
pub use matrix::{log_softmax, softmax, Matrix};
pub use optim::{lr_schedule, sgd_step, LrMode, MomentumBuffer};
pub use params::{Gradient, Layout, ParamVector, Segment, Tensor};
pub use tape::{Tape, Var};
