//! From-scratch LSTM binary sentiment classifier.
//!
//! One embedding layer, a single LSTM layer (forget gate, no peepholes) and a
//! logistic output on the last non-padded hidden state:
//!
//! ```text
//! i_t = σ(x_t W_i + h_{t-1} U_i + b_i)      f_t = σ(x_t W_f + h_{t-1} U_f + b_f)
//! o_t = σ(x_t W_o + h_{t-1} U_o + b_o)      c̃_t = tanh(x_t W_c + h_{t-1} U_c + b_c)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ c̃_t          h_t = o_t ⊙ tanh(c_t)
//! p   = σ(h_T · w_out + b_out)
//! ```
//!
//! Everything is generic over [`Real`] so gradient checks can run in `f64`
//! while training and the on-disk format use `f32`.

mod cell;
mod dataset;
mod eval;
mod io;
mod params;
mod train;

pub use cell::{backward, bce_loss, forward, gradients, ForwardCache};
pub use dataset::{
    open_sentiment140, parse_sentiment140, read_sentiment140, scan_sentiment140, stratified_sample,
    Sentiment140, Sentiment140Error, Sentiment140Row,
};
pub use eval::{evaluate, Confusion, EvalReport};
pub use io::{
    decode_model, encode_model, load_meta, load_model, save_meta, save_model, ModelMeta,
    MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use params::{Gate, LstmHyperparams, LstmModel, LstmParams, Matrix, Real};
pub use train::{
    stratified_split, train, Adam, EpochStats, Example, Split, TrainHistory, TrainOptions,
    TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model shape error: {0}")]
    Shape(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("training data error: {0}")]
    TrainData(String),
    #[error("cannot load model from {path}: {reason}")]
    Load { path: String, reason: String },
    #[error("model io error: {0}")]
    Io(#[from] std::io::Error),
}
