//! From-scratch transformer for long-horizon merge-trajectory
//! prediction: tensor kernel, attention stack, sliding-window dataset
//! builder, RMSProp training loop, and autoregressive rollout.

mod checkpoint;
mod dataset;
mod layers;
mod model;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{load_model, save_model};
pub use dataset::{
    build_windows, state_features, FeatureRow, NormStats, WindowBuild, WindowSample, FEATURES,
};
pub use layers::{
    positional_encoding, scaled_dot_product_attention, softmax_rows, LayerNorm, Linear,
    MultiHeadAttention,
};
pub use model::{mse_loss, GradientSet, Mode, ModelConfig, TransformerModel, LAYER_NORM_EPS};
pub use optim::RmsProp;
pub use tensor::Tensor;
pub use train::{
    evaluate_mse, rollout_predict, train, write_loss_history, EpochLoss, TrainParams, TrainReport,
};
