//! Network models of the one-step transition probabilities and their
//! two-stage training.

pub mod batch;
pub mod features;
pub mod model;
pub mod train;

pub use batch::{prepare_contracts, PreparedContract, SequenceBatch};
pub use features::{encode_baseline, encode_step, fit_residual_scaler, raw_residual_features};
pub use model::{
    BaseLogits, BaselineModel, Checkpoint, Model, ResidualModel, BASELINE_WIDTHS, RESIDUAL_WIDTHS,
};
pub use train::{
    baseline_fit, batch_order, empirical_risk, fit_baseline, fit_residual, log_to_csv, prepare_portfolio,
    BaselineConfig, BaselineFit, BaselineRun, EpochLog, ResidualConfig, ResidualRun, TrainConfig,
};
