//! Learned reconstruction: an FCL front end that learns the inverse
//! operator, image-to-image heads (U-Net, DCAN-style decoder), losses, and
//! the two-step / one-step training procedures.

mod loss;
mod model;
mod network;
mod spec;
mod train;

pub use loss::{loss, loss_mse, loss_rmse_dssim, ssim_graph};
pub use model::{EpochRecord, Latency, Provenance, TrainedModel, ValidationRecord};
pub use network::{
    check_parameters, fit_input_norm, forward, init_parameters, parameter_slots, preprocess, Forward, ParamSlot, Role,
};
pub use spec::{DcanSpec, FrontEnd, Head, InputNorm, LossKind, NetworkSpec, TrainConfig, UnetSpec};
pub use train::{
    evaluate, split_data, train_dcan_decoder, train_front_end, train_ost, train_tst, train_unet_baseline, SplitData,
    TstOutcome,
};
