//! Sequence-to-sequence trajectory regressor trained from scratch.
//!
//! Every time step passes through input normalization, a GRU encoder, layer
//! normalization, a ReLU dense layer, a GRU decoder and a linear output, so
//! the predicted sequence has the same length as the history. Gradients are
//! computed by hand-written backpropagation through time.

mod adam;
mod layers;
mod model;
mod train;
mod weights;

pub use adam::{adam_update, AdamState};
pub use layers::{
    dense_backward, dense_forward, gru_backward_batch, gru_forward_batch, norm_backward, norm_forward, DenseParams,
    GruCache, GruParams, Mat, NormCache, NormKind, NormParams, NORM_EPSILON,
};
pub use model::{
    batch_rmse, from_batch, gru_forward, layer_norm, loss_and_gradients, loss_gradients, model_forward, mse_loss,
    rmse, to_batch, ForwardCache, InputStats, ModelConfig, ModelParams, SequenceTensor, FEATURES,
};
pub use train::{evaluate, train, write_train_log, EvalReport, TrainConfig, TrainLogRow, TrainReport};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_VERSION};
