//! Minimal neural-network toolkit: tensors, a reverse-mode tape, layers and
//! optimisation utilities.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod scale;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use layers::{Activation, Bound, Dense, Gru, NamedTensor, ParamId, ParamSet};
pub use optim::{clip_gradients, global_norm, lr_schedule, stopping_epoch, Adam, AdamConfig, EarlyStopping};
pub use scale::MinMaxScaler;
pub use tape::{kl_divergence, softmax_rows, CashFlowBatch, Gradients, Tape, Var, KL_EPS};
pub use tensor::Tensor;
