//! Reverse-mode autodiff on a flat tape, plus the few layer kinds the model
//! needs (1-d convolution, group norm, bidirectional LSTM, linear) and Adam.
//!
//! Everything is f64. Values are row-major matrices where rows are time
//! frames; parameters live in a [`ParamStore`] keyed by dotted path names and
//! bind into a tape at most once, so weight sharing falls out of reusing a
//! name within one graph.

mod adam;
mod check;
mod layers;
mod params;
mod tape;

pub use adam::{Adam, AdamSlot};
pub use check::{fd_check, FdReport};
pub use layers::{
    blstm, blstm_stack, conv1d, group_norm, linear, lstm_dir, register_blstm,
    register_blstm_stack, register_conv1d, register_group_norm, register_linear,
    register_lstm_dir,
};
pub use params::{ParamStore, Tensor};
pub use tape::{Id, Tape};
