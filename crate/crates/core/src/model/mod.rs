//! Frame-level engagement classifier: fully connected stack, LSTM layers and
//! a softmax output, trained with class-weighted cross-entropy.

mod loss;
mod net;
mod optim;
mod params;
mod train;
mod weights;

pub use loss::{softmax_rows, weighted_ce_loss, LossOutput, PROB_FLOOR};
pub use net::{
    argmax, backward_from_logits, forward, forward_route, from_time_major, to_time_major,
    ForwardCache, Mode, Route, Trainable,
};
pub use optim::{clip_grad_norm, Sgd, SgdConfig};
pub use params::{Dense, Gradients, LstmLayer, NetConfig, NetParams, ParamGroup};
pub use train::{
    predict_proba, predict_proba_strided, predict_sequence, session_matrix, stack_batch, train, ClassWeighting, EpochLog,
    TrainConfig, TrainOutcome,
};
pub use weights::{read_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
